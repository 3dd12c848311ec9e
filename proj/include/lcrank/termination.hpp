#pragma once

// Early-termination policies replayed against stored full curves. The
// ranking-model policy follows the incumbent-comparison loop: the first run
// always completes; later runs are checked every `cadence` epochs and stopped
// when the model puts their win probability at or below delta, unless their
// best observed value already beats the incumbent's final.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lcrank/corpus.hpp"
#include "lcrank/ranker.hpp"

namespace lcrank {

enum class PolicyKind { none, lcranknet, last_value, successive_halving, hyperband };

std::string policy_kind_name(PolicyKind k);
PolicyKind policy_kind_from(const std::string& name);

struct TerminationPolicy {
  PolicyKind kind = PolicyKind::none;
  double delta = 0.45;       // lcranknet stop threshold
  int cadence = 3;           // decision grid for lcranknet / last_value
  int sh_initial_runs = 8;   // successive halving cohort size
  int sh_interval = 3;       // epochs per halving round
  int hb_max_resource = 81;  // hyperband R
  int hb_eta = 3;            // hyperband elimination ratio

  static TerminationPolicy none();
  static TerminationPolicy lcranknet(double delta, int cadence = 3);
  static TerminationPolicy last_value(int cadence = 3);
  static TerminationPolicy successive_halving(int initial_runs, int interval);
  static TerminationPolicy hyperband(int max_resource, int eta);

  void validate() const;
  std::string name() const;
};

// Incumbent bookkeeping for one sequential search replay.
struct SearchState {
  std::optional<RunRecord> incumbent;  // best completed run so far
  double y_max = 0.0;                  // its normalized final value
  std::vector<double> completed_finals;
  long long epochs_consumed = 0;
};

struct TraceEntry {
  int epoch = 0;
  double p = 0.0;    // win probability (or the value statistic for last_value)
  bool max_branch = false;  // best partial beat the incumbent, p not consulted
  bool stopped = false;
};

struct ReplayDecision {
  std::string run_id;
  int stop_epoch = 0;
  bool stopped_early = false;
  std::vector<TraceEntry> trace;  // one entry per consulted checkpoint
};

// One ranking model per curve length, cached by length. A training bank
// trains lazily on a fixed record set; a directory bank loads stored
// checkpoints named f_<l>.json. Banks are reused across order seeds and
// policies.
class ModelBank {
 public:
  ModelBank(std::vector<RunRecord> train_records, ModelConfig config);
  static ModelBank from_directory(const std::string& dir);

  RankerParams& at(int l);
  bool contains(int l) const { return bank_.count(l) != 0; }
  const ModelConfig& config() const { return config_; }

 private:
  ModelBank() = default;

  std::vector<RunRecord> train_records_;
  ModelConfig config_;
  std::string checkpoint_dir_;
  int max_length_ = 0;
  std::map<int, RankerParams> bank_;
};

struct StopDecision {
  bool stop = false;
  double p = 0.0;
  bool max_branch = false;
};

// One checkpoint decision for the ranking-model policy: continue outright if
// the run's best observed value beats y_max, otherwise stop iff
// sigma(f_l(run) - f_l(incumbent)) <= delta. Both curves enter truncated to l.
StopDecision should_stop_lcranknet(const RunRecord& run, int l, const SearchState& state,
                                   double delta, ModelBank& bank, const NormalizationStats& stats);

// Stop iff the best value seen so far falls short of the incumbent's final.
bool last_value_stop(const std::vector<double>& partial, double y_max);

// Reveals the run epoch by epoch, consulting the policy at multiples of the
// cadence; applies to the streaming policies (none / last_value / lcranknet).
// Updates epoch accounting and the incumbent (completed runs only).
ReplayDecision replay_policy(const RunRecord& run, SearchState& state,
                             const TerminationPolicy& policy, ModelBank* bank,
                             const NormalizationStats& stats);

// Halving schedule for one cohort: every surviving run advances `interval`
// epochs per round, then the worse half (floor(active/2) survive, ties keep
// the earlier index) is stopped; the last survivor runs one extra round.
// `partial_best(run, epoch)` must return the run's best value up to `epoch`,
// higher better. Returns each run's stop epoch.
std::vector<int> successive_halving_schedule(
    int n, int interval, int max_epochs,
    const std::function<double(int, int)>& partial_best);

struct BracketRound {
  int survivors = 0;
  int resource = 0;  // cumulative epochs per survivor at this round's end
};

struct Bracket {
  int s = 0;       // bracket index, s_max down to 0
  int initial = 0; // configurations entering the bracket
  std::vector<BracketRound> rounds;
};

// s_max = floor(log_eta R); bracket s starts n = ceil((s_max+1)/(s+1) * eta^s)
// configurations at resource R * eta^(-s), multiplying the resource by eta and
// keeping the top floor(n/eta) each round.
std::vector<Bracket> hyperband_brackets(int max_resource, int eta);

// Checkpoint log: run_id, epoch, p (empty when not consulted), action.
std::string decision_trace_csv(const std::vector<ReplayDecision>& decisions);
void write_decision_trace_csv(const std::vector<ReplayDecision>& decisions,
                              const std::string& path);

}  // namespace lcrank
