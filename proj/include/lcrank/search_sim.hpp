#pragma once

// Evaluation protocols over stored corpora: ranking quality as a function of
// observed curve length, seeded random-search replays with epoch and regret
// accounting, an aging-evolution optimizer fed by predicted finals for
// terminated runs, and the results CSV the protocols share.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lcrank/corpus.hpp"
#include "lcrank/ranker.hpp"
#include "lcrank/termination.hpp"

namespace lcrank {

// Positions in ascending order, 1-based; equal values share the average of
// their positions.
std::vector<double> average_ranks(const std::vector<double>& values);

// Pearson correlation of the average-rank vectors. Throws NumericError
// ("undefined correlation") for n < 2 or zero rank variance. Computed as
// (Sa+Sb)/(2*sqrt(Sa*Sb)) - sum(d^2)/(2*sqrt(Sa*Sb)), which reduces to the
// classical 1 - 6*sum(d^2)/(n(n^2-1)) bit for bit when there are no ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

enum class RankingScorer { model, last_value, oracle, random_scores };

std::string ranking_scorer_name(RankingScorer s);
RankingScorer ranking_scorer_from(const std::string& name);

struct RankingEvalResult {
  std::string dataset;
  std::string scorer;
  std::vector<double> fractions;
  std::vector<std::vector<double>> per_rep;  // [fraction][repetition]; NaN = undefined
  std::vector<double> mean_correlation;      // over defined repetitions
  std::vector<double> sd_correlation;        // sample sd, 0 when < 2 defined
};

// Per repetition: sample n_test test and n_train training runs from the
// held-out dataset, train a fresh model per curve length on the other
// datasets plus those training runs, rank the test runs, and correlate with
// their true finals. Baseline scorers skip the training step.
RankingEvalResult ranking_experiment(const Corpus& corpus, const std::string& held_out,
                                     RankingScorer scorer, const ModelConfig& config,
                                     int repetitions, std::uint64_t seed,
                                     std::vector<double> fractions, int n_test = 50,
                                     int n_train = 5);

struct ReplayResult {
  std::string policy;
  std::string dataset;
  std::uint64_t order_seed = 0;
  std::string chosen_run_id;
  double chosen_final = 0.0;  // normalized
  double best_final = 0.0;    // no-termination reference over the same order
  double regret = 0.0;
  long long epochs_consumed = 0;
  std::vector<ReplayDecision> decisions;  // in replay order
};

// Replays the held-out runs in a seeded order under the policy. The first
// run always completes and fixes the normalization scale. Streaming policies
// keep incumbent state; cohort policies consume the order in batches.
ReplayResult random_search_replay(const Corpus& corpus, const std::string& held_out,
                                  const TerminationPolicy& policy, std::uint64_t order_seed,
                                  ModelBank* bank = nullptr, int max_runs = 0);

struct EvolutionConfig {
  int population = 10;
  int tournament = 3;
  int budget = 100;  // total evaluations, including the initial population
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvolutionResult {
  std::string best_run_id;
  double best_objective = 0.0;
  long long epochs_consumed = 0;
  int evaluations = 0;
  std::vector<std::pair<long long, double>> incumbent_trace;  // (epochs, best so far)
};

// Aging evolution over the dataset's runs treated as a tabular search space:
// mutate the tournament winner in one token or hyperparameter coordinate and
// evaluate the nearest matching corpus run (unevaluated rows first). Runs
// stopped early contribute their predicted final as the objective.
EvolutionResult regularized_evolution(const Corpus& corpus, const std::string& dataset,
                                      const TerminationPolicy& policy,
                                      const EvolutionConfig& config, ModelBank* bank = nullptr);

struct ReportRow {
  std::string dataset;
  std::string policy;
  double mean_regret = 0.0;
  double mean_epochs = 0.0;
  double speedup = 1.0;  // epochs(none) / epochs(policy); NaN without a none row
  int results = 0;
};

// One row per (dataset, policy), sorted lexicographically.
std::vector<ReportRow> aggregate_report(const std::vector<ReplayResult>& results);
std::string report_csv(const std::vector<ReportRow>& rows);

struct ResultRow {
  std::string protocol;
  std::string dataset;
  std::string policy;
  std::uint64_t seed = 0;
  std::optional<double> length_fraction;
  std::optional<double> spearman_value;
  std::optional<double> regret;
  std::optional<long long> epochs;
};

std::vector<ResultRow> ranking_result_rows(const RankingEvalResult& result);
ResultRow replay_result_row(const ReplayResult& result);

// Deterministic CSV: rows sorted by every column left to right, doubles in
// 17-digit form, empty cells for non-applicable or undefined values.
std::string results_csv(std::vector<ResultRow> rows);
void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path);

}  // namespace lcrank
