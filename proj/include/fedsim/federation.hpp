#pragma once
//
// Federated averaging engine.
//
// One round:
//   1. sample a cohort S_t of clients (uniform or size-proportional),
//   2. every selected client copies the global parameters and trains E local
//      epochs of mini-batch size B with a fresh optimizer,
//   3. the server replaces the global parameters by the n_k-weighted mean of
//      the returned parameters (or, for the stale variant, of the latest
//      parameters cached for every client),
//   4. the new global model is scored on the central evaluation set.
//
// All randomness is derived from FederationConfig::seed by counter, so the
// result does not depend on the number of worker threads.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/error.hpp"
#include "fedsim/features.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class SamplerKind { uniform, proportional };
enum class AggregatorKind { fedavg, stale };

inline const char* to_string(SamplerKind k) { return k == SamplerKind::uniform ? "uniform" : "proportional"; }
inline const char* to_string(AggregatorKind k) { return k == AggregatorKind::fedavg ? "fedavg" : "stale"; }

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "uniform") return SamplerKind::uniform;
  if (s == "proportional") return SamplerKind::proportional;
  throw ValidationError("unknown sampler '" + s + "' (expected uniform|proportional)");
}

inline AggregatorKind parse_aggregator(const std::string& s) {
  if (s == "fedavg") return AggregatorKind::fedavg;
  if (s == "stale") return AggregatorKind::stale;
  throw ValidationError("unknown aggregator '" + s + "' (expected fedavg|stale)");
}

struct FederationConfig {
  double C = 0.1;             // fraction of clients per round
  std::size_t E = 1;          // local epochs
  std::size_t B = 64;         // local mini-batch size
  std::size_t rounds = 50;
  std::uint64_t seed = 1;
  OptimizerConfig optimizer;
  SamplerKind sampler = SamplerKind::uniform;
  AggregatorKind aggregator = AggregatorKind::fedavg;
  std::size_t threads = 0;        // 0: FSIM_THREADS, else 1
  bool record_wall_time = false;  // off keeps round logs reproducible byte-for-byte

  void validate() const {
    detail::require(C > 0.0 && C <= 1.0, "federation: C must be in (0, 1]");
    detail::require(E >= 1, "federation: E must be >= 1");
    detail::require(B >= 1, "federation: B must be >= 1");
    detail::require(rounds >= 1, "federation: rounds must be >= 1");
    optimizer.validate();
  }
};

// Worker count: the explicit request, else 1, capped by FSIM_THREADS when it
// holds a positive integer. With no request the cap itself is used.
inline std::size_t resolve_threads(std::size_t requested) {
  std::size_t cap = 0;
  if (const char* env = std::getenv("FSIM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) cap = static_cast<std::size_t>(v);
  }
  if (requested == 0) return cap ? cap : 1;
  return cap ? std::min(requested, cap) : requested;
}

// ---------------------------------------------------------------------------
// Client selection

inline std::vector<std::size_t> select_clients_uniform(std::size_t num_clients, double fraction, Rng& rng) {
  detail::require(num_clients >= 1, "select_clients_uniform: no clients");
  detail::require(fraction > 0.0 && fraction <= 1.0, "select_clients_uniform: C must be in (0, 1]");
  const std::size_t m = cohort_size(num_clients, fraction);
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  // Partial Fisher-Yates: the first m slots become the sample.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(num_clients - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Successive draws without replacement, each with probability proportional
// to the remaining clients' sizes.
inline std::vector<std::size_t> select_clients_proportional(std::span<const std::size_t> sizes,
                                                            double fraction, Rng& rng) {
  detail::require(!sizes.empty(), "select_clients_proportional: no clients");
  detail::require(fraction > 0.0 && fraction <= 1.0, "select_clients_proportional: C must be in (0, 1]");
  for (auto n : sizes) detail::require(n >= 1, "select_clients_proportional: client sizes must be >= 1");
  const std::size_t m = cohort_size(sizes.size(), fraction);

  std::vector<std::size_t> remaining(sizes.size());
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::vector<std::size_t> out;
  for (std::size_t draw = 0; draw < m; ++draw) {
    double total = 0.0;
    for (auto k : remaining) total += static_cast<double>(sizes[k]);
    const double target = rng.uniform() * total;
    std::size_t pick = remaining.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      acc += static_cast<double>(sizes[remaining[i]]);
      if (target < acc) {
        pick = i;
        break;
      }
    }
    out.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Local training

// Mini-batch training over one dataset with a persistent optimizer and
// shuffle stream. Each epoch reshuffles and keeps the short final batch.
class EpochTrainer {
 public:
  EpochTrainer(const ModelSpec& spec, const LabeledBatch& data, std::size_t batch_size,
               const OptimizerConfig& opt, std::uint64_t seed, std::size_t num_params)
      : spec_(spec), data_(data), batch_size_(batch_size), optimizer_(opt, num_params), rng_(seed) {
    detail::require(data.size() >= 1, "training data is empty");
    detail::require(batch_size >= 1, "batch size must be >= 1");
    order_.resize(data.size());
  }

  // Returns the mean of the mini-batch losses seen during the epoch.
  double run_epoch(ParameterVector& params) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order_.size(); lo += batch_size_) {
      const std::size_t hi = std::min(order_.size(), lo + batch_size_);
      const auto batch = data_.gather(std::span<const std::size_t>(order_.data() + lo, hi - lo));
      auto lg = loss_and_grad(spec_, params, batch);
      if (!std::isfinite(lg.loss)) throw RuntimeFailure("non-finite training loss");
      params = optimizer_.step(params, lg.grad);
      loss_sum += lg.loss;
      ++batches;
    }
    if (!params.all_finite()) throw RuntimeFailure("training produced non-finite parameters");
    return loss_sum / static_cast<double>(batches);
  }

 private:
  const ModelSpec& spec_;
  const LabeledBatch& data_;
  std::size_t batch_size_;
  Optimizer optimizer_;
  Rng rng_;
  std::vector<std::size_t> order_;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  ParameterVector params;
  std::size_t n = 0;
};

inline ClientUpdate local_update(const ModelSpec& spec, const ParameterVector& global,
                                 const ClientDataset& client, std::size_t client_id, std::size_t epochs,
                                 std::size_t batch_size, const OptimizerConfig& opt, std::uint64_t seed) {
  if (client.n() == 0) throw ValidationError("local_update: client '" + client.id + "' has no data");
  ClientUpdate out{client_id, global, client.n()};
  if (epochs == 0) return out;
  EpochTrainer trainer(spec, client.examples, batch_size, opt, seed, global.size());
  for (std::size_t e = 0; e < epochs; ++e) trainer.run_epoch(out.params);
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace detail {

// sum_k (n_k / mu) * w_k over entries visited in the given order. The exact
// value lies in the coordinate-wise hull of the inputs; rounding can put it
// an ulp outside, so it is clamped back.
template <typename Entries>
ParameterVector weighted_mean(const Entries& entries) {
  const ParameterVector& first = entries.front().first;
  double mu = 0.0;
  for (const auto& [p, n] : entries) mu += static_cast<double>(n);
  ParameterVector out(first.manifest());
  std::vector<double> lo(first.values().begin(), first.values().end()), hi = lo;
  for (const auto& [p, n] : entries) {
    require_same_layout(first, p, "aggregate");
    const double w = static_cast<double>(n) / mu;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += w * p[i];
      lo[i] = std::min(lo[i], p[i]);
      hi[i] = std::max(hi[i], p[i]);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lo[i], hi[i]);
  return out;
}

}  // namespace detail

inline ParameterVector fedavg_aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw ValidationError("fedavg_aggregate: no updates");
  std::vector<const ClientUpdate*> sorted;
  for (const auto& u : updates) {
    if (u.n < 1) throw ValidationError("fedavg_aggregate: client with n_k = 0");
    sorted.push_back(&u);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i]->client_id == sorted[i - 1]->client_id)
      throw ValidationError("fedavg_aggregate: duplicate update for client " +
                            std::to_string(sorted[i]->client_id));
  std::vector<std::pair<const ParameterVector&, std::size_t>> entries;
  for (const auto* u : sorted) entries.emplace_back(u->params, u->n);
  return detail::weighted_mean(entries);
}

// Latest parameters and size of every client, keyed by client id.
struct StaleEntry {
  ParameterVector params;
  std::size_t n = 0;
};
using StaleCache = std::map<std::size_t, StaleEntry>;

inline StaleCache make_stale_cache(const ParameterVector& init, std::span<const std::size_t> sizes) {
  StaleCache cache;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    detail::require(sizes[k] >= 1, "stale cache: client sizes must be >= 1");
    cache.emplace(k, StaleEntry{init, sizes[k]});
  }
  return cache;
}

struct StaleResult {
  ParameterVector global;
  StaleCache cache;
};

// Overwrites the cached entries of the fresh updates, then averages every
// cached entry weighted by n_k.
inline StaleResult stale_aggregate(StaleCache cache, std::span<const ClientUpdate> fresh) {
  if (cache.empty()) throw ValidationError("stale_aggregate: empty cache");
  for (const auto& u : fresh) {
    auto it = cache.find(u.client_id);
    if (it == cache.end())
      throw ValidationError("stale_aggregate: update for unknown client " + std::to_string(u.client_id));
    if (u.n < 1) throw ValidationError("stale_aggregate: client with n_k = 0");
    it->second = {u.params, u.n};
  }
  std::vector<std::pair<const ParameterVector&, std::size_t>> entries;
  for (const auto& [_, e] : cache) entries.emplace_back(e.params, e.n);
  auto global = detail::weighted_mean(entries);
  return {std::move(global), std::move(cache)};
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  double pr_auc = 0.0;
  double loss = 0.0;
  std::size_t skipped_classes = 0;
};

// Macro PR-AUC (and mean BCE) of the model on the evaluation set. Grouped
// rows are patches of one clip; their scores are averaged before scoring.
inline Evaluation evaluate(const ModelSpec& spec, const ParameterVector& params, const EvalSet& eval) {
  if (eval.size() == 0) throw ValidationError("evaluate: empty evaluation set");
  Evaluation out;
  out.loss = loss_only(spec, params, eval.batch);
  const Matrix scores = forward(spec, params, eval.batch.inputs);
  if (!eval.grouped()) {
    const auto m = macro_pr_auc(scores, eval.batch.targets);
    out.pr_auc = m.value;
    out.skipped_classes = m.skipped_classes;
    return out;
  }
  if (eval.groups.size() != eval.size()) throw ValidationError("evaluate: group ids do not cover every row");
  std::map<std::uint32_t, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < eval.size(); ++r) rows_of[eval.groups[r]].push_back(r);
  Matrix clip_s, clip_y;
  for (const auto& [_, rows] : rows_of) {
    clip_s.append_row(clip_scores(scores.gather(rows)));
    clip_y.append_row(eval.batch.targets.row(rows.front()));
  }
  const auto m = macro_pr_auc(clip_s, clip_y);
  out.pr_auc = m.value;
  out.skipped_classes = m.skipped_classes;
  return out;
}

// ---------------------------------------------------------------------------
// Round loop

struct RoundRecord {
  std::size_t t = 0;
  std::vector<std::size_t> selected;  // ascending client indices
  std::size_t mu_t = 0;
  std::map<std::string, double> eval_metrics;  // "pr_auc", "eval_loss"
  double wall_time = 0.0;                      // seconds; 0 unless recorded

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct FederationResult {
  std::vector<RoundRecord> rounds;
  ParameterVector final_params;
};

using RoundCallback = std::function<void(const RoundRecord&, const ParameterVector&)>;

inline std::uint64_t client_seed(std::uint64_t master, std::size_t round, std::size_t client) {
  return derive_seed(master, Stream::client, round, client);
}

namespace detail {

// Runs fn(i) for i in [0, count) on up to `threads` workers. The first
// exception by index order is rethrown after all workers finish.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline FederationResult run_federation(const FederationConfig& config, const std::vector<ClientDataset>& clients,
                                       const EvalSet& eval, const ModelSpec& spec,
                                       const RoundCallback& on_round = {}) {
  config.validate();
  spec.validate();
  detail::require(!clients.empty(), "run_federation: no clients");
  detail::require(eval.size() >= 1, "run_federation: empty evaluation set");
  std::vector<std::size_t> sizes;
  for (const auto& c : clients) {
    detail::require(c.n() >= 1, "run_federation: client '" + c.id + "' has no data");
    sizes.push_back(c.n());
  }
  const std::size_t threads = resolve_threads(config.threads);

  FederationResult result;
  ParameterVector global = init_params(spec, derive_seed(config.seed, Stream::init));
  StaleCache cache;
  if (config.aggregator == AggregatorKind::stale) cache = make_stale_cache(global, sizes);

  for (std::size_t t = 1; t <= config.rounds; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng round_rng(derive_seed(config.seed, Stream::select, t));
    RoundRecord rec;
    rec.t = t;
    rec.selected = config.sampler == SamplerKind::uniform
                       ? select_clients_uniform(clients.size(), config.C, round_rng)
                       : select_clients_proportional(sizes, config.C, round_rng);

    std::vector<ClientUpdate> updates(rec.selected.size());
    detail::parallel_for(rec.selected.size(), threads, [&](std::size_t i) {
      const std::size_t k = rec.selected[i];
      updates[i] = local_update(spec, global, clients[k], k, config.E, config.B, config.optimizer,
                                client_seed(config.seed, t, k));
    });
    for (const auto& u : updates) rec.mu_t += u.n;

    if (config.aggregator == AggregatorKind::fedavg) {
      global = fedavg_aggregate(updates);
    } else {
      auto r = stale_aggregate(std::move(cache), updates);
      global = std::move(r.global);
      cache = std::move(r.cache);
    }

    const auto ev = evaluate(spec, global, eval);
    rec.eval_metrics["pr_auc"] = ev.pr_auc;
    rec.eval_metrics["eval_loss"] = ev.loss;
    if (config.record_wall_time)
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_round) on_round(rec, global);
    result.rounds.push_back(std::move(rec));
  }
  result.final_params = std::move(global);
  return result;
}

}  // namespace fedsim
