#include "fsl/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <numeric>
#include <random>
#include <thread>

#include "fsl/errors.hpp"
#include "fsl/seeds.hpp"

namespace fsl {

namespace {

std::size_t selection_size(std::size_t num_workers, double fraction) {
  const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(num_workers) + 1e-9));
  return std::clamp<std::size_t>(m, 1, num_workers);
}

// Runs fn(i) for i in [0, n) on up to `threads` threads. Each index writes
// only its own slot, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += workers) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::string to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kFedAvg: return "fedavg";
    case DefenseKind::kMedian: return "median";
    case DefenseKind::kTrimmedMean: return "tmean";
    case DefenseKind::kMultiKrum: return "mkrum";
    case DefenseKind::kFoolsGold: return "fgold";
    case DefenseKind::kFlDefender: return "fl_defender";
  }
  return "?";
}

DefenseKind parse_defense(const std::string& text) {
  for (auto kind : {DefenseKind::kFedAvg, DefenseKind::kMedian, DefenseKind::kTrimmedMean, DefenseKind::kMultiKrum,
                    DefenseKind::kFoolsGold, DefenseKind::kFlDefender}) {
    if (text == to_string(kind)) return kind;
  }
  throw ConfigError("unknown defense '" + text + "' (fedavg, median, tmean, mkrum, fgold, fl_defender)");
}

void ExperimentConfig::validate() const {
  if (num_workers == 0) throw ConfigError("workers must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in (0, 1]");
  if (rounds == 0) throw ConfigError("rounds must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("learning_rate must be >= 0 and momentum in [0, 1)");
  }
  if (report_window == 0) throw ConfigError("report_window must be >= 1");
  if (data.partition == PartitionRegime::kDirichlet && !(data.alpha > 0.0)) {
    throw ConfigError("dirichlet alpha must be > 0");
  }

  const std::size_t m = selection_size(num_workers, fraction);
  switch (defense.kind) {
    case DefenseKind::kFlDefender:
      if (m < 3) throw ConfigError("fl_defender needs at least 3 selected workers per round");
      break;
    case DefenseKind::kMultiKrum: {
      const std::size_t f = defense.krum_f.value_or(default_krum_f(m));
      if (m < f + 3) throw ConfigError("mkrum needs at least f + 3 selected workers per round");
      if (defense.krum_select && (*defense.krum_select == 0 || *defense.krum_select > m)) {
        throw ConfigError("mkrum select must lie in [1, m]");
      }
      break;
    }
    case DefenseKind::kTrimmedMean: {
      if (!(defense.trim_beta >= 0.0 && defense.trim_beta < 0.5)) throw ConfigError("trim_beta must lie in [0, 0.5)");
      const auto trim = static_cast<std::size_t>(std::floor(defense.trim_beta * static_cast<double>(m)));
      if (m <= 2 * trim) throw ConfigError("trim_beta trims every selected update");
      break;
    }
    default:
      break;
  }
  if (attack.kind == AttackKind::kBackdoor && !attack.trigger) throw ConfigError("trigger required for a backdoor attack");
}

std::vector<std::size_t> select_workers(std::size_t num_workers, double fraction, std::uint64_t round_seed) {
  if (num_workers == 0) throw InputError("select_workers: no workers");
  const std::size_t m = selection_size(num_workers, fraction);
  std::vector<std::size_t> ids(num_workers);
  std::iota(ids.begin(), ids.end(), 0);
  if (m == num_workers) return ids;
  std::mt19937_64 rng(round_seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

WorkerUpdate worker_update(std::size_t worker_id, const ParameterSet& global, const Dataset& local_data,
                           const ExperimentConfig& config, std::uint64_t shuffle_seed) {
  if (local_data.size() == 0) throw InputError("worker " + std::to_string(worker_id) + " has no data");
  WorkerUpdate update{worker_id, global, local_data.size()};
  if (config.local_epochs == 0 || config.learning_rate == 0.0) return update;

  ParameterSet velocity = global.zeros_like();
  std::vector<std::size_t> order(local_data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch batch = local_data.gather(idx);
      const ForwardCache cache = forward(update.params, batch);
      const ParameterSet grads = backward(update.params, cache, batch.labels);
      sgd_step(update.params, grads, config.learning_rate, config.momentum, velocity);
    }
  }
  return update;
}

EvalMetrics evaluate(const ParameterSet& model, const Dataset& clean_test, const AttackConfig& attack,
                     const Batch* trigger_set) {
  if (clean_test.size() == 0) throw InputError("empty test set");
  if (attack.kind == AttackKind::kBackdoor && trigger_set == nullptr) {
    throw InputError("backdoor evaluation needs the trigger-stamped test set");
  }
  const ForwardCache cache = forward(model, clean_test.features);
  EvalMetrics out;
  std::size_t correct = 0, src_total = 0, src_correct = 0, src_to_target = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < clean_test.size(); ++i) {
    const auto p = cache.probs.row(i);
    const int y = clean_test.labels[i];
    const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-12));
    if (pred == y) ++correct;
    if (y == attack.source_class) {
      ++src_total;
      if (pred == y) ++src_correct;
      if (pred == attack.target_class) ++src_to_target;
    }
  }
  const double n = static_cast<double>(clean_test.size());
  out.test_error = loss / n;
  out.all_acc = static_cast<double>(correct) / n;
  out.src_acc = src_total ? static_cast<double>(src_correct) / static_cast<double>(src_total) : 0.0;

  if (attack.kind == AttackKind::kBackdoor) {
    const auto preds = predict(model, trigger_set->inputs);
    const auto hits = std::count(preds.begin(), preds.end(), attack.target_class);
    out.asr = preds.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(preds.size());
  } else {
    out.asr = src_total ? static_cast<double>(src_to_target) / static_cast<double>(src_total) : 0.0;
  }
  return out;
}

ExperimentSummary summarize(const std::vector<RoundMetrics>& rounds, std::size_t window) {
  ExperimentSummary s;
  if (rounds.empty()) return s;
  s.window = std::min(window, rounds.size());
  for (std::size_t i = rounds.size() - s.window; i < rounds.size(); ++i) {
    s.test_error += rounds[i].test_error;
    s.all_acc += rounds[i].all_acc;
    s.src_acc += rounds[i].src_acc;
    s.asr += rounds[i].asr;
    s.agg_wall_time_s += rounds[i].agg_wall_time_s;
  }
  const double w = static_cast<double>(s.window);
  s.test_error /= w;
  s.all_acc /= w;
  s.src_acc /= w;
  s.asr /= w;
  s.agg_wall_time_s /= w;
  return s;
}

Defense::Defense(DefenseConfig config, std::size_t num_workers)
    : config_(config), trust_(num_workers), histories_(num_workers), snapshot_(num_workers, 0.0) {}

ParameterSet Defense::aggregate(const ParameterSet& global, std::span<const WorkerUpdate> updates) {
  std::fill(snapshot_.begin(), snapshot_.end(), 0.0);
  fallback_ = false;
  auto mark_all = [&] {
    for (const auto& u : updates) snapshot_[u.worker_id] = 1.0;
  };

  switch (config_.kind) {
    case DefenseKind::kFedAvg:
      mark_all();
      return fedavg(updates);
    case DefenseKind::kMedian:
      mark_all();
      return coordinate_median(updates);
    case DefenseKind::kTrimmedMean:
      mark_all();
      return trimmed_mean(updates, config_.trim_beta);
    case DefenseKind::kMultiKrum: {
      KrumResult r = multi_krum(updates, config_.krum_f, config_.krum_select);
      for (std::size_t pos : r.selected) snapshot_[updates[pos].worker_id] = 1.0;
      return std::move(r.params);
    }
    case DefenseKind::kFoolsGold: {
      std::vector<std::vector<double>> selected_histories;
      for (const auto& u : updates) {
        auto g = last_layer_pseudo_gradient(global, u.params);
        auto& h = histories_[u.worker_id];
        if (h.empty()) h.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) h[i] += g[i];
        selected_histories.push_back(h);
      }
      std::vector<double> w = foolsgold(selected_histories);
      if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) {
        std::fill(w.begin(), w.end(), 1.0);
        fallback_ = true;
      }
      for (std::size_t i = 0; i < updates.size(); ++i) snapshot_[updates[i].worker_id] = w[i];
      return aggregate_weighted(updates, w);
    }
    case DefenseKind::kFlDefender: {
      std::vector<std::vector<double>> grads;
      std::vector<std::size_t> ids;
      for (const auto& u : updates) {
        grads.push_back(last_layer_pseudo_gradient(global, u.params));
        ids.push_back(u.worker_id);
      }
      const CompressedFeatures features = engineered_features(grads);
      const std::vector<double> gamma = fl_defender_trust(features.components, features.centroid, ids, trust_);
      fallback_ = trust_.last_fallback;
      snapshot_ = trust_.gamma;
      return aggregate_weighted(updates, gamma);
    }
  }
  throw InternalError("unhandled defense kind");
}

LoadedData load_data(const DataConfig& config, std::uint64_t seed) {
  LoadedData data;
  if (config.source == DataSource::kMnist) {
    data.train = load_idx(config.train_images, config.train_labels);
    data.test = load_idx(config.test_images, config.test_labels);
    if (config.max_train > 0 && config.max_train < data.train.size()) {
      std::vector<std::size_t> head(config.max_train);
      std::iota(head.begin(), head.end(), 0);
      data.train = data.train.subset(head);
    }
    const int classes = std::max(data.train.num_classes, data.test.num_classes);
    data.train.num_classes = data.test.num_classes = classes;
  } else {
    data.train = synth_blobs(config.synth_classes, config.synth_per_class, config.synth_dim, config.synth_spread,
                             derive_seed(seed, Stream::kSynthData));
    data.test = synth_blobs(config.synth_classes, config.synth_test_per_class, config.synth_dim,
                            config.synth_spread, derive_seed(seed, Stream::kSynthTest));
  }
  data.train.validate();
  data.test.validate();
  return data;
}

std::size_t thread_count_from_env() {
  const char* env = std::getenv("FSL_THREADS");
  if (env == nullptr || *env == '\0') return std::max(1u, std::thread::hardware_concurrency());
  char* end = nullptr;
  const unsigned long n = std::strtoul(env, &end, 10);
  if (end == env || *end != '\0') throw ConfigError(std::string("FSL_THREADS is not a number: ") + env);
  return static_cast<std::size_t>(n);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const LoadedData data = load_data(config.data, config.seed);
  return run_experiment(config, data, options);
}

ExperimentResult run_experiment(const ExperimentConfig& config_in, const LoadedData& data, const RunOptions& options) {
  ExperimentConfig config = config_in;
  config.model.input_dim = data.train.dim();
  config.model.num_classes = static_cast<std::size_t>(data.train.num_classes);
  config.validate();

  const std::size_t k = config.num_workers;
  const AttackConfig& attack = config.attack;
  if (!attack.validate(k, data.train.num_classes)) {
    std::cerr << "warning: " << attack.attacker_ids.size() << " attackers exceed the K/5 threat-model bound\n";
  }
  if (attack.kind == AttackKind::kBackdoor && (!data.train.is_image() || !data.test.is_image())) {
    throw ConfigError("backdoor attacks need image data");
  }
  if (attack.kind == AttackKind::kBackdoor && !attack.trigger->fits(data.train.image_rows, data.train.image_cols)) {
    throw ConfigError("trigger does not fit inside the image");
  }
  if (config.model.conv && (!data.train.is_image() || config.model.conv->height != data.train.image_rows ||
                            config.model.conv->width != data.train.image_cols)) {
    throw ConfigError("conv front-end geometry does not match the image size");
  }
  if (k > data.train.size()) throw ConfigError("more workers than training examples");

  const PartitionPlan plan = config.data.partition == PartitionRegime::kIid
                                 ? partition_iid(data.train, k, config.seed)
                                 : partition_dirichlet(data.train, k, config.data.alpha, config.seed);

  std::vector<Dataset> clean(k), poisoned(k);
  for (std::size_t w = 0; w < k; ++w) {
    clean[w] = data.train.subset(plan.assignments[w]);
    if (!attack.is_attacker(w)) continue;
    switch (attack.kind) {
      case AttackKind::kNone:
        poisoned[w] = clean[w];
        break;
      case AttackKind::kLabelFlip:
        poisoned[w] = flip_labels(clean[w], attack.source_class, attack.target_class);
        break;
      case AttackKind::kBackdoor:
        poisoned[w] = embed_backdoor(clean[w], attack.source_class, attack.target_class, *attack.trigger,
                                     attack.poison_fraction, derive_seed(config.seed, Stream::kAttack, w));
        break;
    }
  }

  std::optional<Batch> trigger_set;
  if (attack.kind == AttackKind::kBackdoor) {
    trigger_set = make_backdoor_testset(data.test, attack.source_class, *attack.trigger);
  }

  const std::size_t threads = options.threads.value_or(thread_count_from_env());
  ParameterSet global = make_model(config.model, derive_seed(config.seed, Stream::kInit));
  Defense defense(config.defense, k);

  ExperimentResult result;
  const std::size_t last_round = options.stop_after_round ? std::min(*options.stop_after_round + 1, config.rounds)
                                                          : config.rounds;
  for (std::size_t t = 0; t < last_round; ++t) {
    const auto selected = select_workers(k, config.fraction, derive_seed(config.seed, Stream::kSelection, t));
    std::vector<WorkerUpdate> updates(selected.size());
    parallel_for(selected.size(), threads, [&](std::size_t i) {
      const std::size_t w = selected[i];
      const bool attacking = attack.kind != AttackKind::kNone && attack.is_attacker(w) && t >= attack.start_round;
      updates[i] = worker_update(w, global, attacking ? poisoned[w] : clean[w], config,
                                 derive_seed(config.seed, Stream::kShuffle, t, w));
    });
    if (options.observer) options.observer(t, global, updates);

    const auto start = std::chrono::steady_clock::now();
    global = defense.aggregate(global, updates);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

    const EvalMetrics eval = evaluate(global, data.test, attack, trigger_set ? &*trigger_set : nullptr);
    RoundMetrics rm;
    rm.round = t;
    rm.test_error = eval.test_error;
    rm.all_acc = eval.all_acc;
    rm.src_acc = eval.src_acc;
    rm.asr = eval.asr;
    rm.gamma = defense.snapshot();
    rm.agg_wall_time_s = elapsed.count();
    rm.trust_fallback = defense.last_fallback();
    result.rounds.push_back(std::move(rm));
  }
  result.summary = summarize(result.rounds, config.report_window);
  result.final_model = std::move(global);
  return result;
}

}  // namespace fsl
