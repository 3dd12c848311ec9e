#include "lcrank/search_sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

namespace lcrank {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double oriented(double v, MetricOrientation m) {
  return m == MetricOrientation::higher_better ? v : -v;
}

double true_final_oriented(const RunRecord& r) {
  return oriented(r.curve.back(), r.metric_orientation);
}

// First `take` elements of a seeded permutation of 0..n-1.
std::vector<int> sample_indices(int n, int take, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int k = 0; k < take; ++k) {
    const std::int64_t j = k + rng.uniform_int(n - k);
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(take));
  return idx;
}

std::vector<const RunRecord*> dataset_runs(const Corpus& corpus, const std::string& dataset) {
  std::vector<const RunRecord*> runs;
  for (const RunRecord& r : corpus.records)
    if (r.dataset_id == dataset) runs.push_back(&r);
  if (runs.empty()) throw ValidationError("no runs for dataset \"" + dataset + "\"");
  return runs;
}

double normalized_final(const NormalizationStats& stats, const RunRecord& r) {
  return normalize(stats, r, r.epochs()).back();
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return values[static_cast<std::size_t>(a)] <
                                              values[static_cast<std::size_t>(b)]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[static_cast<std::size_t>(order[j + 1])] ==
                            values[static_cast<std::size_t>(order[i])])
      ++j;
    // Positions i..j (0-based) share the average 1-based rank.
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[static_cast<std::size_t>(order[k])] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("spearman needs equal lengths");
  const std::size_t n = a.size();
  if (n < 2) throw NumericError("undefined correlation");
  for (double v : a)
    if (!std::isfinite(v)) throw NumericError("undefined correlation");
  for (double v : b)
    if (!std::isfinite(v)) throw NumericError("undefined correlation");

  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double mean = (static_cast<double>(n) + 1.0) / 2.0;
  double sa = 0.0, sb = 0.0, sd2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    sa += da * da;
    sb += db * db;
    const double d = ra[i] - rb[i];
    sd2 += d * d;
  }
  if (sa == 0.0 || sb == 0.0) throw NumericError("undefined correlation");
  const double den = 2.0 * std::sqrt(sa * sb);
  return (sa + sb) / den - sd2 / den;
}

std::string ranking_scorer_name(RankingScorer s) {
  switch (s) {
    case RankingScorer::model: return "lcranknet";
    case RankingScorer::last_value: return "last_value";
    case RankingScorer::oracle: return "oracle";
    case RankingScorer::random_scores: return "random";
  }
  throw ValidationError("unknown ranking scorer");
}

RankingScorer ranking_scorer_from(const std::string& name) {
  if (name == "lcranknet") return RankingScorer::model;
  if (name == "last_value") return RankingScorer::last_value;
  if (name == "oracle") return RankingScorer::oracle;
  if (name == "random") return RankingScorer::random_scores;
  throw ValidationError("unknown ranking scorer \"" + name + "\"");
}

RankingEvalResult ranking_experiment(const Corpus& corpus, const std::string& held_out,
                                     RankingScorer scorer, const ModelConfig& config,
                                     int repetitions, std::uint64_t seed,
                                     std::vector<double> fractions, int n_test, int n_train) {
  if (repetitions < 1) throw ValidationError("repetitions must be >= 1");
  if (n_test < 2 || n_train < 0) throw ValidationError("need n_test >= 2 and n_train >= 0");
  for (double f : fractions)
    if (f < 0.0 || f > 1.0) throw ValidationError("length fractions must lie in [0,1]");

  const auto [meta, held] = lodo_split(corpus, held_out);
  const int available = static_cast<int>(held.size());
  if (available < n_test + n_train)
    throw ValidationError("held-out dataset \"" + held_out + "\" has " +
                          std::to_string(available) + " runs; need " +
                          std::to_string(n_test + n_train));
  int full_length = 0;
  for (const RunRecord& r : held) full_length = std::max(full_length, r.epochs());

  RankingEvalResult result;
  result.dataset = held_out;
  result.scorer = ranking_scorer_name(scorer);
  result.fractions = fractions;
  result.per_rep.assign(fractions.size(), std::vector<double>(static_cast<std::size_t>(repetitions), kNan));

  for (int rep = 0; rep < repetitions; ++rep) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(rep)));
    const std::vector<int> picked = sample_indices(available, n_test + n_train, rng);
    std::vector<const RunRecord*> test_runs;
    for (int k = 0; k < n_test; ++k) test_runs.push_back(&held[static_cast<std::size_t>(picked[static_cast<std::size_t>(k)])]);
    std::vector<RunRecord> train_records = meta;
    for (int k = n_test; k < n_test + n_train; ++k)
      train_records.push_back(held[static_cast<std::size_t>(picked[static_cast<std::size_t>(k)])]);

    std::vector<double> finals;
    for (const RunRecord* r : test_runs) finals.push_back(true_final_oriented(*r));

    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
      const int l = static_cast<int>(std::lround(fractions[fi] * full_length));
      std::vector<double> scores(test_runs.size(), 0.0);
      if (scorer == RankingScorer::model) {
        ModelConfig cfg = config;
        cfg.seed = mix_seed(config.seed, static_cast<std::uint64_t>(rep));
        RankerParams fl = train_fl(train_records, l, cfg);
        std::vector<EncodedInput> xs;
        bool uniform_l = true;
        for (const RunRecord* r : test_runs) {
          const int lr = std::min(l, r->epochs());
          uniform_l &= lr == l;
          xs.push_back(encode_input(*r, lr, fl));
        }
        if (uniform_l) {
          scores = batch_score(xs, fl);
        } else {
          for (std::size_t k = 0; k < xs.size(); ++k) scores[k] = score(xs[k], fl);
        }
      } else if (scorer == RankingScorer::last_value) {
        for (std::size_t k = 0; k < test_runs.size(); ++k) {
          const int lr = std::min(l, test_runs[k]->epochs());
          scores[k] = lr >= 1 ? oriented(test_runs[k]->curve[static_cast<std::size_t>(lr - 1)],
                                         test_runs[k]->metric_orientation)
                              : 0.0;
        }
      } else if (scorer == RankingScorer::oracle) {
        scores = finals;
      } else {
        for (double& s : scores) s = rng.uniform();
      }

      try {
        result.per_rep[fi][static_cast<std::size_t>(rep)] = spearman(scores, finals);
      } catch (const NumericError&) {
        // undefined correlation stays a missing point
      }
    }
  }

  for (const std::vector<double>& reps : result.per_rep) {
    std::vector<double> defined;
    for (double v : reps)
      if (std::isfinite(v)) defined.push_back(v);
    if (defined.empty()) {
      result.mean_correlation.push_back(kNan);
      result.sd_correlation.push_back(kNan);
      continue;
    }
    const double mean = mean_of(defined);
    double var = 0.0;
    for (double v : defined) var += (v - mean) * (v - mean);
    result.mean_correlation.push_back(mean);
    result.sd_correlation.push_back(
        defined.size() >= 2 ? std::sqrt(var / (static_cast<double>(defined.size()) - 1.0)) : 0.0);
  }
  return result;
}

namespace {

// Cohort elimination shared by successive halving and hyperband replays:
// reveal every active run to `epoch`, rank by best value so far, keep `keep`.
struct CohortReplay {
  const NormalizationStats& stats;
  std::vector<const RunRecord*> runs;

  double best_at(int run, int epoch) const {
    const RunRecord& r = *runs[static_cast<std::size_t>(run)];
    const std::vector<double> partial = normalize(stats, r, std::min(epoch, r.epochs()));
    return *std::max_element(partial.begin(), partial.end());
  }
};

ReplayResult finish_cohort_result(const std::vector<const RunRecord*>& order,
                                  const std::vector<int>& stops,
                                  const NormalizationStats& stats, ReplayResult result) {
  long long epochs = 0;
  double best_partial = -std::numeric_limits<double>::infinity();
  std::size_t champion = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const RunRecord& r = *order[i];
    const int stop = std::min(stops[i], r.epochs());
    epochs += stop;
    ReplayDecision d;
    d.run_id = r.run_id;
    d.stop_epoch = stop;
    d.stopped_early = stop < r.epochs();
    result.decisions.push_back(std::move(d));
    const std::vector<double> partial = normalize(stats, r, stop);
    const double value = *std::max_element(partial.begin(), partial.end());
    if (value > best_partial) {
      best_partial = value;
      champion = i;
    }
  }
  result.epochs_consumed = epochs;
  result.chosen_run_id = order[champion]->run_id;
  result.chosen_final = normalized_final(stats, *order[champion]);
  return result;
}

}  // namespace

ReplayResult random_search_replay(const Corpus& corpus, const std::string& held_out,
                                  const TerminationPolicy& policy, std::uint64_t order_seed,
                                  ModelBank* bank, int max_runs) {
  policy.validate();
  std::vector<const RunRecord*> order = dataset_runs(corpus, held_out);
  Rng rng(order_seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const std::int64_t j = rng.uniform_int(static_cast<std::int64_t>(i) + 1);
    std::swap(order[i], order[static_cast<std::size_t>(j)]);
  }
  if (max_runs > 0 && static_cast<std::size_t>(max_runs) < order.size())
    order.resize(static_cast<std::size_t>(max_runs));

  // The metric scale is treated as known (accuracy-style bounds): statistics
  // come from the dataset's stored curves, never from other datasets.
  std::vector<RunRecord> held_records;
  for (const RunRecord* r : dataset_runs(corpus, held_out)) held_records.push_back(*r);
  const NormalizationStats stats = compute_stats(held_records);

  ReplayResult result;
  result.policy = policy.name();
  result.dataset = held_out;
  result.order_seed = order_seed;

  double best = -std::numeric_limits<double>::infinity();
  for (const RunRecord* r : order) best = std::max(best, normalized_final(stats, *r));
  result.best_final = best;

  if (policy.kind == PolicyKind::successive_halving) {
    std::vector<int> stops(order.size(), 0);
    std::size_t base = 0;
    while (base < order.size()) {
      const int cohort = static_cast<int>(
          std::min<std::size_t>(static_cast<std::size_t>(policy.sh_initial_runs), order.size() - base));
      CohortReplay cr{stats, {order.begin() + static_cast<std::ptrdiff_t>(base),
                              order.begin() + static_cast<std::ptrdiff_t>(base) + cohort}};
      int max_epochs = 0;
      for (const RunRecord* r : cr.runs) max_epochs = std::max(max_epochs, r->epochs());
      const std::vector<int> cohort_stops = successive_halving_schedule(
          cohort, policy.sh_interval, max_epochs,
          [&](int run, int epoch) { return cr.best_at(run, epoch); });
      for (int k = 0; k < cohort; ++k) stops[base + static_cast<std::size_t>(k)] = cohort_stops[static_cast<std::size_t>(k)];
      base += static_cast<std::size_t>(cohort);
    }
    result = finish_cohort_result(order, stops, stats, std::move(result));
  } else if (policy.kind == PolicyKind::hyperband) {
    const std::vector<Bracket> brackets = hyperband_brackets(policy.hb_max_resource, policy.hb_eta);
    std::vector<int> stops(order.size(), 0);
    std::size_t base = 0;
    for (const Bracket& bracket : brackets) {
      if (base >= order.size()) break;
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(bracket.initial),
                                                  order.size() - base);
      CohortReplay cr{stats, {order.begin() + static_cast<std::ptrdiff_t>(base),
                              order.begin() + static_cast<std::ptrdiff_t>(base + n)}};
      std::vector<int> active(n);
      std::iota(active.begin(), active.end(), 0);
      for (std::size_t round = 0; round < bracket.rounds.size() && !active.empty(); ++round) {
        const int resource = bracket.rounds[round].resource;
        for (int run : active) stops[base + static_cast<std::size_t>(run)] = resource;
        if (round + 1 == bracket.rounds.size()) break;
        std::stable_sort(active.begin(), active.end(), [&](int a, int b) {
          const double va = cr.best_at(a, resource);
          const double vb = cr.best_at(b, resource);
          if (va != vb) return va > vb;
          return a < b;
        });
        active.resize(active.size() / static_cast<std::size_t>(policy.hb_eta));
      }
      base += n;
    }
    result = finish_cohort_result(order, stops, stats, std::move(result));
  } else {
    SearchState state;
    for (const RunRecord* r : order) result.decisions.push_back(replay_policy(*r, state, policy, bank, stats));
    result.epochs_consumed = state.epochs_consumed;
    result.chosen_run_id = state.incumbent->run_id;
    result.chosen_final = state.y_max;
  }

  result.regret = std::max(0.0, result.best_final - result.chosen_final);
  return result;
}

void EvolutionConfig::validate() const {
  if (tournament < 1 || population < tournament || budget < population)
    throw ValidationError("need 1 <= tournament <= population <= budget");
}

namespace {

struct TabularSpace {
  std::vector<const RunRecord*> rows;
  std::vector<std::vector<std::string>> token_pool;  // per position, sorted distinct
  std::vector<std::string> hparam_names;
  std::vector<std::vector<double>> hparam_pool;      // per name, sorted distinct

  explicit TabularSpace(std::vector<const RunRecord*> r) : rows(std::move(r)) {
    std::size_t positions = 0;
    for (const RunRecord* row : rows) positions = std::max(positions, row->arch_tokens.size());
    std::vector<std::set<std::string>> tokens(positions);
    std::map<std::string, std::set<double>> hparams;
    for (const RunRecord* row : rows) {
      for (std::size_t i = 0; i < row->arch_tokens.size(); ++i) tokens[i].insert(row->arch_tokens[i]);
      for (const auto& [k, v] : row->hparams) hparams[k].insert(v);
    }
    for (const auto& s : tokens) token_pool.emplace_back(s.begin(), s.end());
    for (const auto& [k, s] : hparams) {
      hparam_names.push_back(k);
      hparam_pool.emplace_back(s.begin(), s.end());
    }
  }

  int distance(const RunRecord& row, const std::vector<std::string>& tokens,
               const std::vector<std::pair<std::string, double>>& hparams) const {
    int d = 0;
    const std::size_t common = std::min(row.arch_tokens.size(), tokens.size());
    for (std::size_t i = 0; i < common; ++i) d += row.arch_tokens[i] != tokens[i];
    d += static_cast<int>(std::max(row.arch_tokens.size(), tokens.size()) - common);
    for (const auto& [k, v] : hparams) {
      bool matched = false;
      for (const auto& [rk, rv] : row.hparams) {
        if (rk == k) {
          matched = rv == v;
          break;
        }
      }
      d += !matched;
    }
    return d;
  }
};

}  // namespace

EvolutionResult regularized_evolution(const Corpus& corpus, const std::string& dataset,
                                      const TerminationPolicy& policy,
                                      const EvolutionConfig& config, ModelBank* bank) {
  config.validate();
  policy.validate();
  if (policy.kind == PolicyKind::successive_halving || policy.kind == PolicyKind::hyperband)
    throw ValidationError(policy.name() + " schedules cohorts and cannot drive evolution");
  if (policy.kind != PolicyKind::none && bank == nullptr)
    throw ValidationError("evolution under a stopping policy needs a model bank for predicted finals");

  TabularSpace space(dataset_runs(corpus, dataset));
  const int n_rows = static_cast<int>(space.rows.size());
  if (config.population > n_rows)
    throw ValidationError("population exceeds the " + std::to_string(n_rows) + " stored runs");

  std::vector<RunRecord> all_rows;
  for (const RunRecord* r : space.rows) all_rows.push_back(*r);
  const NormalizationStats stats = compute_stats(all_rows);

  Rng rng(config.seed);
  SearchState state;
  EvolutionResult result;
  std::unordered_set<int> evaluated;

  struct Individual {
    int row = 0;
    double objective = 0.0;
  };
  std::deque<Individual> population;

  auto evaluate = [&](int row_index) {
    const RunRecord& run = *space.rows[static_cast<std::size_t>(row_index)];
    const ReplayDecision d = replay_policy(run, state, policy, bank, stats);
    double objective;
    if (d.stopped_early) {
      RankerParams& fl = bank->at(d.stop_epoch);
      const EncodedInput x = encode_input(run, d.stop_epoch, fl, &stats);
      const double best_partial = *std::max_element(x.curve.begin(), x.curve.end());
      objective = predict_final(x, fl, state.completed_finals, best_partial);
    } else {
      objective = normalized_final(stats, run);
    }
    evaluated.insert(row_index);
    ++result.evaluations;
    if (result.incumbent_trace.empty() || objective > result.best_objective) {
      result.best_objective = objective;
      result.best_run_id = run.run_id;
    }
    result.incumbent_trace.emplace_back(state.epochs_consumed, result.best_objective);
    return Individual{row_index, objective};
  };

  const std::vector<int> initial = sample_indices(n_rows, config.population, rng);
  for (int row : initial) population.push_back(evaluate(row));

  while (result.evaluations < config.budget) {
    // Tournament: sample distinct population slots, take the best objective.
    const std::vector<int> slots = sample_indices(config.population, config.tournament, rng);
    int parent_slot = slots[0];
    for (int s : slots)
      if (population[static_cast<std::size_t>(s)].objective >
              population[static_cast<std::size_t>(parent_slot)].objective ||
          (population[static_cast<std::size_t>(s)].objective ==
               population[static_cast<std::size_t>(parent_slot)].objective &&
           s < parent_slot))
        parent_slot = s;
    const RunRecord& parent = *space.rows[static_cast<std::size_t>(population[static_cast<std::size_t>(parent_slot)].row)];

    std::vector<std::string> tokens = parent.arch_tokens;
    std::vector<std::pair<std::string, double>> hparams = parent.hparams;
    const int coords = static_cast<int>(tokens.size() + hparams.size());
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int c = static_cast<int>(rng.uniform_int(coords));
      if (c < static_cast<int>(tokens.size())) {
        const auto& pool = space.token_pool[static_cast<std::size_t>(c)];
        if (pool.size() < 2) continue;
        const std::string& pick = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(pool.size())))];
        if (pick == tokens[static_cast<std::size_t>(c)]) continue;
        tokens[static_cast<std::size_t>(c)] = pick;
      } else {
        const std::string& name = hparams[static_cast<std::size_t>(c) - tokens.size()].first;
        const auto it = std::find(space.hparam_names.begin(), space.hparam_names.end(), name);
        if (it == space.hparam_names.end()) continue;
        const auto& pool = space.hparam_pool[static_cast<std::size_t>(it - space.hparam_names.begin())];
        if (pool.size() < 2) continue;
        const double pick = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(pool.size())))];
        if (pick == hparams[static_cast<std::size_t>(c) - tokens.size()].second) continue;
        hparams[static_cast<std::size_t>(c) - tokens.size()].second = pick;
      }
      break;
    }

    // Child = nearest stored row, unevaluated rows first, corpus order last.
    int child = -1;
    std::tuple<int, int, int> best_key{2, 1 << 30, 1 << 30};
    for (int row = 0; row < n_rows; ++row) {
      const std::tuple<int, int, int> key{evaluated.count(row) ? 1 : 0,
                                          space.distance(*space.rows[static_cast<std::size_t>(row)], tokens, hparams),
                                          row};
      if (key < best_key) {
        best_key = key;
        child = row;
      }
    }

    population.push_back(evaluate(child));
    population.pop_front();
  }

  result.epochs_consumed = state.epochs_consumed;
  return result;
}

std::vector<ReportRow> aggregate_report(const std::vector<ReplayResult>& results) {
  if (results.empty()) throw ValidationError("nothing to aggregate");
  std::map<std::pair<std::string, std::string>, std::vector<const ReplayResult*>> groups;
  for (const ReplayResult& r : results) groups[{r.dataset, r.policy}].push_back(&r);

  std::map<std::string, double> none_epochs;
  for (const auto& [key, group] : groups) {
    if (key.second != "none") continue;
    std::vector<double> epochs;
    for (const ReplayResult* r : group) epochs.push_back(static_cast<double>(r->epochs_consumed));
    none_epochs[key.first] = mean_of(epochs);
  }

  std::vector<ReportRow> rows;
  for (const auto& [key, group] : groups) {
    ReportRow row;
    row.dataset = key.first;
    row.policy = key.second;
    std::vector<double> regrets, epochs;
    for (const ReplayResult* r : group) {
      regrets.push_back(r->regret);
      epochs.push_back(static_cast<double>(r->epochs_consumed));
    }
    row.mean_regret = mean_of(regrets);
    row.mean_epochs = mean_of(epochs);
    row.results = static_cast<int>(group.size());
    const auto it = none_epochs.find(key.first);
    row.speedup = it != none_epochs.end() && row.mean_epochs > 0.0 ? it->second / row.mean_epochs
                                                                   : kNan;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "dataset,policy,mean_regret,mean_epochs,speedup,results\n";
  for (const ReportRow& r : rows) {
    out << r.dataset << ',' << r.policy << ',' << format_double(r.mean_regret) << ','
        << format_double(r.mean_epochs) << ',';
    if (std::isfinite(r.speedup)) out << format_double(r.speedup);
    out << ',' << r.results << '\n';
  }
  return out.str();
}

std::vector<ResultRow> ranking_result_rows(const RankingEvalResult& result) {
  std::vector<ResultRow> rows;
  for (std::size_t fi = 0; fi < result.fractions.size(); ++fi) {
    for (std::size_t rep = 0; rep < result.per_rep[fi].size(); ++rep) {
      ResultRow row;
      row.protocol = "ranking";
      row.dataset = result.dataset;
      row.policy = result.scorer;
      row.seed = rep;
      row.length_fraction = result.fractions[fi];
      const double value = result.per_rep[fi][rep];
      if (std::isfinite(value)) row.spearman_value = value;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

ResultRow replay_result_row(const ReplayResult& result) {
  ResultRow row;
  row.protocol = "replay";
  row.dataset = result.dataset;
  row.policy = result.policy;
  row.seed = result.order_seed;
  row.regret = result.regret;
  row.epochs = result.epochs_consumed;
  return row;
}

std::string results_csv(std::vector<ResultRow> rows) {
  auto key = [](const ResultRow& r) {
    return std::make_tuple(r.protocol, r.dataset, r.policy, r.seed,
                           r.length_fraction.value_or(-1.0), r.spearman_value.value_or(-2.0),
                           r.regret.value_or(-1.0),
                           r.epochs.value_or(std::numeric_limits<long long>::min()));
  };
  std::sort(rows.begin(), rows.end(),
            [&](const ResultRow& a, const ResultRow& b) { return key(a) < key(b); });

  std::ostringstream out;
  out << "protocol,dataset,policy,seed,length_fraction,spearman,regret,epochs\n";
  for (const ResultRow& r : rows) {
    out << r.protocol << ',' << r.dataset << ',' << r.policy << ',' << r.seed << ',';
    if (r.length_fraction) out << format_double(*r.length_fraction);
    out << ',';
    if (r.spearman_value) out << format_double(*r.spearman_value);
    out << ',';
    if (r.regret) out << format_double(*r.regret);
    out << ',';
    if (r.epochs) out << *r.epochs;
    out << '\n';
  }
  return out.str();
}

void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open \"" + path + "\" for writing");
  out << results_csv(rows);
  if (!out.flush()) throw IoError("failed writing \"" + path + "\"");
}

}  // namespace lcrank
