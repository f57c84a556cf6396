#pragma once

// In-process worker pool for fitness evaluation with a report cache.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "coeffs.hpp"
#include "expr.hpp"
#include "trainer.hpp"

namespace glo {

using Payload = std::variant<Expr, CoeffExpr>;

struct EvalJob {
  std::uint64_t job_id = 0;
  Payload payload;
  std::shared_ptr<const FitnessTask> task;
  std::uint64_t seed = 0;  // passed to FitnessTask::with_seed
};

/// Canonical key of the payload followed by "@<seed hex>". Coefficient
/// payloads carry their slots and values in the key.
std::string job_key(const EvalJob& job);

/// Insert-once store of completed reports. Infrastructure failures are never
/// stored. Safe for concurrent use.
class ReportCache {
 public:
  std::optional<FitnessReport> lookup(const std::string& key) const;
  bool insert(const std::string& key, const FitnessReport& report);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, FitnessReport> values_;
};

struct JobLogEntry {
  std::uint64_t job_id = 0;
  std::string key;
  bool cached = false;  // served from the cache or from an identical job in the same batch
  FitnessReport report;

  /// One-line JSON: job_id, key, cached, fitness, failure, steps, duration_s.
  std::string json() const;
};

using Evaluator = std::function<FitnessReport(const Payload&, const FitnessTask&)>;

/// fitness_of on the payload.
FitnessReport default_evaluator(const Payload& payload, const FitnessTask& task);

class EvalPool {
 public:
  explicit EvalPool(int workers, Evaluator evaluator = default_evaluator);
  ~EvalPool();
  EvalPool(const EvalPool&) = delete;
  EvalPool& operator=(const EvalPool&) = delete;

  int workers() const noexcept { return static_cast<int>(threads_.size()); }
  /// Number of evaluator calls made so far.
  std::uint64_t invocations() const noexcept;

  /// Reports aligned with `jobs`. Each distinct uncached key is evaluated once;
  /// a job whose evaluator throws gets an Infrastructure report. Blocks until
  /// the whole batch is done. Call from one coordinating thread.
  std::vector<FitnessReport> evaluate_batch(std::span<const EvalJob> jobs, ReportCache* cache = nullptr,
                                            std::vector<JobLogEntry>* log = nullptr);

 private:
  void worker_loop();

  Evaluator evaluator_;
  std::vector<std::thread> threads_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  bool stopping_ = false;
  std::uint64_t invocations_ = 0;
};

/// Worker count from GLO_WORKERS if set, else hardware concurrency (at least 1).
int default_worker_count();

}  // namespace glo
