#include "evalpool.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace glo {

std::string job_key(const EvalJob& job) {
  char seed[17];
  std::snprintf(seed, sizeof seed, "%016llx", static_cast<unsigned long long>(job.seed));
  std::string key = std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Expr>) {
          return canonicalize(p);
        } else {
          std::string k = "coeff " + format(p.base) + " slots";
          for (auto s : p.slots) k += " " + std::to_string(s);
          k += " values";
          for (double v : p.values) k += " " + format_real(v);
          return k;
        }
      },
      job.payload);
  return key + "@" + seed;
}

std::optional<FitnessReport> ReportCache::lookup(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

bool ReportCache::insert(const std::string& key, const FitnessReport& report) {
  if (report.failure == Failure::Infrastructure) return false;
  std::lock_guard lock(mu_);
  return values_.emplace(key, report).second;
}

std::size_t ReportCache::size() const {
  std::lock_guard lock(mu_);
  return values_.size();
}

std::string JobLogEntry::json() const {
  nlohmann::ordered_json j;
  j["job_id"] = job_id;
  j["key"] = key;
  j["cached"] = cached;
  j["fitness"] = report.fitness;
  j["failure"] = std::string(failure_name(report.failure));
  j["steps"] = report.steps_completed;
  j["duration_s"] = cached ? 0.0 : report.wall_time_seconds;
  if (!report.error.empty()) j["error"] = report.error;
  return j.dump();
}

FitnessReport default_evaluator(const Payload& payload, const FitnessTask& task) {
  return std::visit([&](const auto& p) { return fitness_of(p, task); }, payload);
}

EvalPool::EvalPool(int workers, Evaluator evaluator) : evaluator_(std::move(evaluator)) {
  if (workers < 1) throw std::invalid_argument("evalpool: workers must be at least 1");
  if (!evaluator_) throw std::invalid_argument("evalpool: evaluator is empty");
  threads_.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { worker_loop(); });
}

EvalPool::~EvalPool() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

std::uint64_t EvalPool::invocations() const noexcept {
  std::lock_guard lock(mu_);
  return invocations_;
}

void EvalPool::worker_loop() {
  for (;;) {
    std::function<void()> task;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    task();
  }
}

std::vector<FitnessReport> EvalPool::evaluate_batch(std::span<const EvalJob> jobs, ReportCache* cache,
                                                    std::vector<JobLogEntry>* log) {
  std::vector<std::string> keys(jobs.size());
  std::vector<FitnessReport> out(jobs.size());
  std::vector<bool> served(jobs.size(), false);
  std::unordered_map<std::string, std::size_t> first_of;
  std::vector<std::size_t> unique;

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!jobs[i].task) throw std::invalid_argument("evalpool: job " + std::to_string(jobs[i].job_id) + " has no task");
    keys[i] = job_key(jobs[i]);
    if (first_of.count(keys[i])) continue;
    first_of.emplace(keys[i], i);
    if (cache) {
      if (auto hit = cache->lookup(keys[i])) {
        out[i] = *hit;
        served[i] = true;
        continue;
      }
    }
    unique.push_back(i);
  }

  std::mutex done_mu;
  std::condition_variable done_cv;
  std::size_t remaining = unique.size();
  {
    std::lock_guard lock(mu_);
    for (std::size_t i : unique) {
      queue_.emplace_back([&, i] {
        FitnessReport r;
        try {
          r = evaluator_(jobs[i].payload, jobs[i].task->with_seed(jobs[i].seed));
        } catch (const std::exception& e) {
          r = FitnessReport{};
          r.failure = Failure::Infrastructure;
          r.error = e.what();
        } catch (...) {
          r = FitnessReport{};
          r.failure = Failure::Infrastructure;
          r.error = "unknown exception";
        }
        out[i] = std::move(r);
        std::lock_guard dl(done_mu);
        if (--remaining == 0) done_cv.notify_one();
      });
    }
    invocations_ += unique.size();
  }
  cv_.notify_all();
  {
    std::unique_lock dl(done_mu);
    done_cv.wait(dl, [&] { return remaining == 0; });
  }

  for (std::size_t i : unique)
    if (cache) cache->insert(keys[i], out[i]);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const std::size_t src = first_of.at(keys[i]);
    const bool evaluated_here = src == i && !served[i];
    if (src != i) out[i] = out[src];
    if (log) log->push_back(JobLogEntry{jobs[i].job_id, keys[i], !evaluated_here, out[i]});
  }
  return out;
}

int default_worker_count() {
  if (const char* env = std::getenv("GLO_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
    throw std::invalid_argument(std::string("GLO_WORKERS must be an integer in [1, 1024], got '") + env + "'");
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace glo
