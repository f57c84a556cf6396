#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "expr.hpp"
#include "test_support.hpp"

using namespace glo;

namespace {

Expr baikal() { return parse("(sub (log y) (div x y))"); }

}  // namespace

TEST(Expr, FactoriesAndShape) {
  const Expr e = baikal();
  EXPECT_EQ(e.op(), Op::Sub);
  EXPECT_EQ(e.size(), 6u);
  EXPECT_EQ(e.depth(), 2);
  EXPECT_EQ(e.child(0).op(), Op::Log);
  EXPECT_EQ(e.subtree(3).op(), Op::Div);
  EXPECT_EQ(e.subtree(5).op(), Op::Y);
  EXPECT_THROW(e.subtree(6), std::out_of_range);
}

TEST(Expr, ReplaceSharesUntouchedBranches) {
  const Expr e = baikal();
  const Expr r = e.replace(3, Expr::integer(1));
  EXPECT_EQ(format(r), "(sub (log y) 1)");
  EXPECT_EQ(r.child(0).node(), e.child(0).node());
  EXPECT_EQ(format(e), "(sub (log y) (div x y))");
}

TEST(Expr, RandomTreeDepthZeroIsLeaf) {
  Rng rng(1);
  const GenerationWeights w;
  for (int i = 0; i < 500; ++i) EXPECT_TRUE(is_leaf(random_tree(w, 0, rng).op()));
}

TEST(Expr, RandomTreeDepthBound) {
  Rng rng(2);
  GenerationWeights w;
  for (int d = 0; d <= 4; ++d)
    for (int i = 0; i < 2000; ++i) ASSERT_LE(random_tree(w, d, rng).depth(), d);
  // A leaf-starved weight vector still respects the bound.
  w = GenerationWeights{};
  w.w.fill(100.0);
  w[GenKind::X] = 0.001;
  w[GenKind::Y] = 0.0;
  w[GenKind::One] = 0.0;
  w[GenKind::MinusOne] = 0.0;
  for (int i = 0; i < 500; ++i) ASSERT_LE(random_tree(w, 3, rng).depth(), 3);
}

TEST(Expr, RandomTreeRejectsNegativeDepth) {
  Rng rng(3);
  EXPECT_THROW(random_tree(GenerationWeights{}, -1, rng), std::invalid_argument);
}

TEST(Expr, RootKindFrequenciesFollowWeights) {
  Rng rng(4);
  const GenerationWeights w;
  std::map<GenKind, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) counts[test::root_kind(random_tree(w, 2, rng))]++;
  double total_w = 0;
  for (double v : w.w) total_w += v;
  double chi2 = 0;
  for (std::size_t k = 0; k < kGenKindCount; ++k) {
    const double expect = n * w.w[k] / total_w;
    const double d = counts[static_cast<GenKind>(k)] - expect;
    chi2 += d * d / expect;
  }
  const double dof = kGenKindCount - 1;
  EXPECT_LT(chi2, dof + 3 * std::sqrt(2 * dof));
  // Log is drawn three times as often as Add.
  const double ratio = static_cast<double>(counts[GenKind::Log]) / counts[GenKind::Add];
  const double p_add = 1.0 / total_w;
  const double sd_ratio = 3.0 * std::sqrt((1 - 3 * p_add) / (3 * p_add * n) + (1 - p_add) / (p_add * n));
  EXPECT_NEAR(ratio, 3.0, 3 * sd_ratio);
}

TEST(Expr, WeightValidation) {
  GenerationWeights w;
  w[GenKind::Log] = -1;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  GenerationWeights no_leaf;
  for (GenKind k : {GenKind::X, GenKind::Y, GenKind::One, GenKind::MinusOne}) no_leaf[k] = 0;
  EXPECT_THROW(no_leaf.validate(), std::invalid_argument);
}

TEST(Expr, EvaluateExamples) {
  EXPECT_NEAR(*evaluate(baikal(), 1.0, 0.5), std::log(0.5) - 2.0, 1e-15);
  EXPECT_NEAR(*evaluate(baikal(), 1.0, 0.5), -2.693147180559945, 1e-12);
  EXPECT_EQ(*evaluate(parse("(mul x y)"), 0.0, 0.3), 0.0);
  EXPECT_FALSE(evaluate(parse("(log y)"), 1.0, 0.0).has_value());
  EXPECT_FALSE(evaluate(parse("(sqrt (sub y 1))"), 1.0, 0.5).has_value());
  EXPECT_FALSE(evaluate(parse("(div x (sub y y))"), 1.0, 0.5).has_value());
  EXPECT_EQ(*evaluate(parse("(sqrt (sub y y))"), 1.0, 0.5), 0.0);
}

TEST(Expr, EvaluationIsTotalOnRandomTrees) {
  Rng rng(5);
  const GenerationWeights w;
  for (int i = 0; i < 2000; ++i) {
    const Expr e = random_tree(w, 4, rng);
    for (double x : {0.0, 1.0})
      for (double y : {1e-7, 0.3, 1 - 1e-7}) {
        const auto v = evaluate(e, x, y);
        if (v) EXPECT_TRUE(std::isfinite(*v));
      }
  }
}

TEST(Expr, ProgramMatchesRecursiveEvaluation) {
  Rng rng(6);
  const GenerationWeights w;
  std::vector<double> xs, ys, out, scratch;
  for (int i = 0; i < 64; ++i) {
    xs.push_back(i % 2);
    ys.push_back(0.01 + 0.98 * i / 63.0);
  }
  out.resize(xs.size());
  for (int t = 0; t < 500; ++t) {
    const Expr e = random_tree(w, 4, rng);
    const Program p(e);
    bool all_valid = true;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto a = evaluate(e, xs[i], ys[i]);
      const auto b = p(xs[i], ys[i]);
      ASSERT_EQ(a.has_value(), b.has_value()) << format(e);
      if (a) EXPECT_EQ(*a, *b) << format(e);
      all_valid = all_valid && a.has_value();
    }
    const bool ok = p.evaluate(xs, ys, out, scratch);
    EXPECT_EQ(ok, all_valid) << format(e);
    if (ok)
      for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(out[i], *evaluate(e, xs[i], ys[i]));
  }
}

TEST(Expr, DerivativeExamples) {
  EXPECT_NEAR(*evaluate(differentiate_y(parse("(log y)")), 0.0, 0.25), 4.0, 1e-14);
  EXPECT_NEAR(*evaluate(differentiate_y(parse("(div x y)")), 1.0, 0.5), -4.0, 1e-14);
  EXPECT_EQ(format(differentiate_y(parse("(mul x x)"))), "0");
  EXPECT_NEAR(*evaluate(differentiate_y(parse("(sqrt y)")), 0.0, 0.25), 1.0, 1e-14);
  EXPECT_NEAR(*evaluate(differentiate_y(parse("(square (sub y x))")), 1.0, 0.25), -1.5, 1e-14);
}

TEST(Expr, DerivativeMatchesFiniteDifferences) {
  Rng rng(7);
  const GenerationWeights w;
  int trees = 0;
  int compared = 0;
  while (trees < 100) {
    const Expr e = random_tree(w, 4, rng);
    if (!test::depends_on_y(e)) continue;
    ++trees;
    const Expr d = differentiate_y(e);
    for (int k = 0; k < 20; ++k) {
      const double x = uniform01(rng) < 0.5 ? 0.0 : 1.0;
      const double y = 0.1 + 0.8 * uniform01(rng);
      if (!test::safe_point(e, x, y, 1e-3)) continue;
      const auto fd = test::central_difference([&](double t) { return evaluate(e, x, t); }, y, 1e-5);
      const auto an = evaluate(d, x, y);
      if (!fd || !an) continue;
      ++compared;
      EXPECT_LT(test::rel_error(*an, *fd), 1e-5) << format(e) << " at x=" << x << " y=" << y;
    }
  }
  EXPECT_GT(compared, 500);
}

TEST(Expr, CanonicalizeCommutes) {
  EXPECT_EQ(canonicalize(parse("(add x y)")), canonicalize(parse("(add y x)")));
  EXPECT_NE(canonicalize(parse("(sub x y)")), canonicalize(parse("(sub y x)")));
  EXPECT_EQ(canonicalize(parse("(mul x (log y))")), canonicalize(parse("(mul (log y) x)")));
  EXPECT_EQ(canonicalize(parse("(add (mul y x) (div x (add 1 y)))")),
            canonicalize(parse("(add (div x (add y 1)) (mul x y))")));
  EXPECT_NE(canonicalize(parse("(add x x)")), canonicalize(parse("(mul 2 x)")));
}

TEST(Expr, CanonicalSoundnessOnRandomTrees) {
  Rng rng(8);
  const GenerationWeights w;
  for (int i = 0; i < 1000; ++i) {
    const Expr e = random_tree(w, 4, rng);
    const Expr copy = parse(format(e));
    EXPECT_EQ(canonicalize(e), canonicalize(copy));
    const Expr swapped = test::swap_commutative(e, rng);
    EXPECT_EQ(canonicalize(e), canonicalize(swapped)) << format(e) << " vs " << format(swapped);
  }
}

TEST(Expr, RequiredLeaves) {
  EXPECT_TRUE(contains_required_leaves(baikal()));
  EXPECT_FALSE(contains_required_leaves(parse("(add (log y) 1)")));
  EXPECT_FALSE(contains_required_leaves(parse("x")));
}

TEST(Expr, FormatParseExamples) {
  EXPECT_EQ(format(Expr::x()), "x");
  EXPECT_EQ(parse("x"), Expr::x());
  EXPECT_EQ(parse("(sub (log y) (div x y))"),
            Expr::binary(Op::Sub, Expr::unary(Op::Log, Expr::y()), Expr::binary(Op::Div, Expr::x(), Expr::y())));
  EXPECT_EQ(parse("  ( add\n x\t-1 ) "), Expr::binary(Op::Add, Expr::x(), Expr::integer(-1)));
  EXPECT_EQ(format(parse("(mul 2.5 y)")), "(mul 2.5 y)");
  EXPECT_EQ(format(Expr::real(3.0)), "3.0");
}

TEST(Expr, ParseErrorsReportPosition) {
  try {
    parse("(add x");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 6u);
    EXPECT_NE(e.cause().find("end of input"), std::string::npos);
  }
  EXPECT_THROW(parse("(foo x y)"), ParseError);
  EXPECT_THROW(parse("(log x y)"), ParseError);
  EXPECT_THROW(parse("(add x)"), ParseError);
  EXPECT_THROW(parse("x y"), ParseError);
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(parse("z"), ParseError);
}

TEST(Expr, RoundTripOnRandomTrees) {
  Rng rng(9);
  GenerationWeights w;
  for (int i = 0; i < 2000; ++i) {
    Expr e = random_tree(w, 5, rng);
    if (i % 3 == 0) e = differentiate_y(e);  // includes Real constants
    EXPECT_EQ(parse(format(e)), e) << format(e);
  }
}
