#include "glo/glo.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>
#include <string>

#include "reference_losses.hpp"
#include "trainer.hpp"
#include "workflows.hpp"

struct glo_expr {
  glo::Expr expr;
};

struct glo_model {
  glo::Mlp mlp;
};

namespace {

thread_local std::string g_last_error;

glo_status fail(glo_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

glo_status ok() {
  g_last_error.clear();
  return GLO_OK;
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <class F>
glo_status guard(F&& f) {
  try {
    return f();
  } catch (const glo::ParseError& e) {
    return fail(GLO_ERR_PARSE, e.what());
  } catch (const glo::DataFormatError& e) {
    return fail(GLO_ERR_IO, e.what());
  } catch (const glo::IoError& e) {
    return fail(GLO_ERR_IO, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(GLO_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(GLO_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(GLO_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(GLO_ERR_INTERNAL, "unknown error");
  }
}

glo_status string_out(const std::string& s, char** out) {
  char* p = dup(s);
  if (!p) return fail(GLO_ERR_INTERNAL, "out of memory");
  *out = p;
  return ok();
}

glo::ProgressFn progress_adapter(glo_progress_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& m) { fn(m.c_str(), user); };
}

int finish(const glo::CommandOutcome& o) {
  g_last_error = o.message;
  return o.exit_code;
}

}  // namespace

#define GLO_REQUIRE(cond, msg) \
  if (!(cond)) return fail(GLO_ERR_INVALID_ARGUMENT, msg)

extern "C" {

const char* glo_version(void) { return "0.1.0"; }
const char* glo_last_error(void) { return g_last_error.c_str(); }
void glo_string_free(char* s) { std::free(s); }

glo_status glo_expr_parse(const char* text, glo_expr** out) {
  GLO_REQUIRE(text && out, "glo_expr_parse: null argument");
  return guard([&] {
    *out = new glo_expr{glo::parse(text)};
    return ok();
  });
}

glo_status glo_expr_builtin(const char* name, glo_expr** out) {
  GLO_REQUIRE(name && out, "glo_expr_builtin: null argument");
  return guard([&] {
    *out = new glo_expr{glo::builtin(name).trained_body()};
    return ok();
  });
}

glo_status glo_expr_format(const glo_expr* e, char** out) {
  GLO_REQUIRE(e && out, "glo_expr_format: null argument");
  return guard([&] { return string_out(glo::format(e->expr), out); });
}

glo_status glo_expr_canonical(const glo_expr* e, char** out) {
  GLO_REQUIRE(e && out, "glo_expr_canonical: null argument");
  return guard([&] { return string_out(glo::canonicalize(e->expr), out); });
}

glo_status glo_expr_evaluate(const glo_expr* e, double x, double y, double* out, int* valid) {
  GLO_REQUIRE(e && out && valid, "glo_expr_evaluate: null argument");
  return guard([&] {
    const auto v = glo::evaluate(e->expr, x, y);
    *valid = v.has_value() ? 1 : 0;
    *out = v ? *v : std::numeric_limits<double>::quiet_NaN();
    return ok();
  });
}

glo_status glo_expr_derivative(const glo_expr* e, glo_expr** out) {
  GLO_REQUIRE(e && out, "glo_expr_derivative: null argument");
  return guard([&] {
    *out = new glo_expr{glo::differentiate_y(e->expr)};
    return ok();
  });
}

glo_status glo_expr_size(const glo_expr* e, size_t* out) {
  GLO_REQUIRE(e && out, "glo_expr_size: null argument");
  *out = e->expr.size();
  return ok();
}

glo_status glo_expr_has_required_leaves(const glo_expr* e, int* out) {
  GLO_REQUIRE(e && out, "glo_expr_has_required_leaves: null argument");
  *out = glo::contains_required_leaves(e->expr) ? 1 : 0;
  return ok();
}

void glo_expr_free(glo_expr* e) { delete e; }

glo_status glo_model_load(const char* path, glo_model** out) {
  GLO_REQUIRE(path && out, "glo_model_load: null argument");
  return guard([&] {
    try {
      *out = new glo_model{glo::Mlp::load(path)};
    } catch (const glo::DataFormatError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw glo::IoError(e.what());
    }
    return ok();
  });
}

glo_status glo_model_shape(const glo_model* m, int* input_dim, int* num_classes, int* layers) {
  GLO_REQUIRE(m, "glo_model_shape: null model");
  if (input_dim) *input_dim = m->mlp.input_dim();
  if (num_classes) *num_classes = m->mlp.num_classes();
  if (layers) *layers = static_cast<int>(m->mlp.layers().size());
  return ok();
}

glo_status glo_model_predict(const glo_model* m, const float* features, size_t rows, double* probs) {
  GLO_REQUIRE(m && features && probs, "glo_model_predict: null argument");
  GLO_REQUIRE(rows > 0, "glo_model_predict: rows must be positive");
  return guard([&] {
    const Eigen::Index cols = m->mlp.input_dim();
    const glo::FeatureMatrix x =
        Eigen::Map<const glo::FeatureMatrix>(features, static_cast<Eigen::Index>(rows), cols);
    const Eigen::MatrixXd p = m->mlp.probabilities(x);
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) probs[r * p.cols() + c] = p(r, c);
    return ok();
  });
}

void glo_model_free(glo_model* m) { delete m; }

glo_status glo_default_config(const char* command, char** out) {
  GLO_REQUIRE(command && out, "glo_default_config: null argument");
  return guard([&] {
    try {
      return string_out(glo::default_config(command).dump(2), out);
    } catch (const glo::ConfigError& e) {
      return fail(GLO_ERR_INVALID_ARGUMENT, e.what());
    }
  });
}

int glo_run_command(const char* command, const char* config_json, const char* out_dir, glo_progress_fn progress,
                    void* user) {
  if (!command || !out_dir) {
    g_last_error = "glo_run_command: command and out_dir are required";
    return GLO_EXIT_CONFIG;
  }
  glo::Json overlay;
  if (config_json && *config_json) {
    try {
      overlay = glo::Json::parse(config_json);
    } catch (const std::exception& e) {
      g_last_error = std::string("config is not valid JSON: ") + e.what();
      return GLO_EXIT_CONFIG;
    }
  }
  return finish(glo::run_command(command, overlay, out_dir, progress_adapter(progress, user)));
}

int glo_rerun_manifest(const char* manifest_path, const char* out_dir, glo_progress_fn progress, void* user) {
  if (!manifest_path || !out_dir) {
    g_last_error = "glo_rerun_manifest: manifest_path and out_dir are required";
    return GLO_EXIT_CONFIG;
  }
  return finish(glo::rerun_manifest(manifest_path, out_dir, progress_adapter(progress, user)));
}

}  // extern "C"
