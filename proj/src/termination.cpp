#include "lcrank/termination.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace lcrank {

std::string policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::none: return "none";
    case PolicyKind::lcranknet: return "lcranknet";
    case PolicyKind::last_value: return "last_value";
    case PolicyKind::successive_halving: return "successive_halving";
    case PolicyKind::hyperband: return "hyperband";
  }
  throw ValidationError("unknown policy kind");
}

PolicyKind policy_kind_from(const std::string& name) {
  if (name == "none") return PolicyKind::none;
  if (name == "lcranknet") return PolicyKind::lcranknet;
  if (name == "last_value") return PolicyKind::last_value;
  if (name == "successive_halving") return PolicyKind::successive_halving;
  if (name == "hyperband") return PolicyKind::hyperband;
  throw ValidationError("unknown policy \"" + name + "\"");
}

TerminationPolicy TerminationPolicy::none() { return {}; }

TerminationPolicy TerminationPolicy::lcranknet(double delta, int cadence) {
  TerminationPolicy p;
  p.kind = PolicyKind::lcranknet;
  p.delta = delta;
  p.cadence = cadence;
  p.validate();
  return p;
}

TerminationPolicy TerminationPolicy::last_value(int cadence) {
  TerminationPolicy p;
  p.kind = PolicyKind::last_value;
  p.cadence = cadence;
  p.validate();
  return p;
}

TerminationPolicy TerminationPolicy::successive_halving(int initial_runs, int interval) {
  TerminationPolicy p;
  p.kind = PolicyKind::successive_halving;
  p.sh_initial_runs = initial_runs;
  p.sh_interval = interval;
  p.validate();
  return p;
}

TerminationPolicy TerminationPolicy::hyperband(int max_resource, int eta) {
  TerminationPolicy p;
  p.kind = PolicyKind::hyperband;
  p.hb_max_resource = max_resource;
  p.hb_eta = eta;
  p.validate();
  return p;
}

void TerminationPolicy::validate() const {
  if (kind == PolicyKind::lcranknet && (delta < 0.0 || delta > 1.0 || !std::isfinite(delta)))
    throw ValidationError("delta must lie in [0,1]");
  if ((kind == PolicyKind::lcranknet || kind == PolicyKind::last_value) && cadence < 1)
    throw ValidationError("cadence must be >= 1");
  if (kind == PolicyKind::successive_halving && (sh_initial_runs < 1 || sh_interval < 1))
    throw ValidationError("successive halving needs initial_runs >= 1 and interval >= 1");
  if (kind == PolicyKind::hyperband && (hb_max_resource < 1 || hb_eta < 2))
    throw ValidationError("hyperband needs max_resource >= 1 and eta >= 2");
}

std::string TerminationPolicy::name() const { return policy_kind_name(kind); }

ModelBank::ModelBank(std::vector<RunRecord> train_records, ModelConfig config)
    : train_records_(std::move(train_records)), config_(std::move(config)) {
  if (train_records_.empty()) throw ValidationError("model bank needs training records");
  for (const RunRecord& r : train_records_) max_length_ = std::max(max_length_, r.epochs());
}

ModelBank ModelBank::from_directory(const std::string& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("checkpoint directory \"" + dir + "\" does not exist");
  ModelBank bank;
  bank.checkpoint_dir_ = dir;
  return bank;
}

RankerParams& ModelBank::at(int l) {
  if (l < 0) throw ValidationError("negative curve length");
  auto it = bank_.find(l);
  if (it != bank_.end()) return it->second;
  if (!checkpoint_dir_.empty()) {
    const std::string path = checkpoint_dir_ + "/f_" + std::to_string(l) + ".json";
    if (!std::filesystem::exists(path))
      throw ValidationError("no checkpoint for length " + std::to_string(l) + " in \"" +
                            checkpoint_dir_ + "\"");
    it = bank_.emplace(l, load_checkpoint(path)).first;
    if (bank_.size() == 1) config_ = it->second.config;
    return it->second;
  }
  if (l > max_length_)
    throw ValidationError("no model for length " + std::to_string(l) +
                          ": training curves end at " + std::to_string(max_length_));
  return bank_.emplace(l, train_fl(train_records_, l, config_)).first->second;
}

StopDecision should_stop_lcranknet(const RunRecord& run, int l, const SearchState& state,
                                   double delta, ModelBank& bank, const NormalizationStats& stats) {
  if (!state.incumbent) throw ValidationError("no incumbent: the first run must complete first");
  if (l < 1) throw ValidationError("checkpoint length must be >= 1");
  RankerParams& fl = bank.at(l);
  const EncodedInput x = encode_input(run, l, fl, &stats);
  const double best = *std::max_element(x.curve.begin(), x.curve.end());
  if (best > state.y_max) return {false, std::numeric_limits<double>::quiet_NaN(), true};
  const EncodedInput x_inc = encode_input(*state.incumbent, l, fl, &stats);
  const std::vector<double> scores = batch_score({x, x_inc}, fl);
  const double p = pair_probability(scores[0], scores[1]);
  return {p <= delta, p, false};
}

bool last_value_stop(const std::vector<double>& partial, double y_max) {
  if (partial.empty()) return false;
  return *std::max_element(partial.begin(), partial.end()) < y_max;
}

ReplayDecision replay_policy(const RunRecord& run, SearchState& state,
                             const TerminationPolicy& policy, ModelBank* bank,
                             const NormalizationStats& stats) {
  policy.validate();
  if (policy.kind == PolicyKind::successive_halving || policy.kind == PolicyKind::hyperband)
    throw ValidationError(policy.name() + " schedules cohorts and cannot replay a single run");
  if (policy.kind == PolicyKind::lcranknet && bank == nullptr)
    throw ValidationError("the lcranknet policy needs a model bank");

  ReplayDecision d;
  d.run_id = run.run_id;
  const int L = run.epochs();

  const bool streaming_checks = state.incumbent.has_value() && policy.kind != PolicyKind::none;
  if (streaming_checks) {
    for (int l = policy.cadence; l < L; l += policy.cadence) {
      TraceEntry e;
      e.epoch = l;
      if (policy.kind == PolicyKind::last_value) {
        const std::vector<double> partial = normalize(stats, run, l);
        e.p = *std::max_element(partial.begin(), partial.end());
        e.stopped = last_value_stop(partial, state.y_max);
      } else {
        const StopDecision s = should_stop_lcranknet(run, l, state, policy.delta, *bank, stats);
        e.p = s.p;
        e.max_branch = s.max_branch;
        e.stopped = s.stop;
      }
      d.trace.push_back(e);
      if (e.stopped) {
        d.stop_epoch = l;
        d.stopped_early = true;
        state.epochs_consumed += l;
        return d;
      }
    }
  }

  d.stop_epoch = L;
  state.epochs_consumed += L;
  const double final_value = normalize(stats, run, L).back();
  state.completed_finals.push_back(final_value);
  if (!state.incumbent || final_value > state.y_max) {
    state.incumbent = run;
    state.y_max = final_value;
  }
  return d;
}

std::vector<int> successive_halving_schedule(
    int n, int interval, int max_epochs,
    const std::function<double(int, int)>& partial_best) {
  if (n < 1 || interval < 1 || max_epochs < 1)
    throw ValidationError("successive halving needs n, interval, max_epochs >= 1");
  if (n == 1) return {max_epochs};

  std::vector<int> stop(static_cast<std::size_t>(n), 0);
  std::vector<int> active(static_cast<std::size_t>(n));
  std::iota(active.begin(), active.end(), 0);
  int epoch = 0;
  while (true) {
    epoch = std::min(epoch + interval, max_epochs);
    for (int run : active) stop[static_cast<std::size_t>(run)] = epoch;
    if (active.size() == 1 || epoch >= max_epochs) break;
    std::stable_sort(active.begin(), active.end(), [&](int a, int b) {
      const double va = partial_best(a, epoch);
      const double vb = partial_best(b, epoch);
      if (va != vb) return va > vb;
      return a < b;
    });
    active.resize(active.size() / 2);
  }
  return stop;
}

std::vector<Bracket> hyperband_brackets(int max_resource, int eta) {
  if (max_resource < 1 || eta < 2) throw ValidationError("hyperband needs R >= 1 and eta >= 2");
  int s_max = 0;
  long long pow_eta = 1;
  while (pow_eta * eta <= max_resource) {
    pow_eta *= eta;
    ++s_max;
  }

  std::vector<Bracket> brackets;
  for (int s = s_max; s >= 0; --s) {
    Bracket b;
    b.s = s;
    long long eta_s = 1;
    for (int i = 0; i < s; ++i) eta_s *= eta;
    const long long numer = static_cast<long long>(s_max + 1) * eta_s;
    b.initial = static_cast<int>((numer + s) / (s + 1));  // ceil(numer / (s+1))
    int survivors = b.initial;
    for (int i = 0; i <= s && survivors >= 1; ++i) {
      long long denom = 1;
      for (int j = 0; j < s - i; ++j) denom *= eta;
      BracketRound round;
      round.survivors = survivors;
      round.resource = static_cast<int>(std::max<long long>(1, max_resource / denom));
      b.rounds.push_back(round);
      survivors /= eta;
    }
    brackets.push_back(std::move(b));
  }
  return brackets;
}

std::string decision_trace_csv(const std::vector<ReplayDecision>& decisions) {
  std::ostringstream out;
  out << "run_id,epoch,p,action\n";
  for (const ReplayDecision& d : decisions) {
    for (const TraceEntry& e : d.trace) {
      out << d.run_id << ',' << e.epoch << ',';
      if (!e.max_branch) out << format_double(e.p);
      out << ',' << (e.stopped ? "stop" : "continue") << '\n';
    }
  }
  return out.str();
}

void write_decision_trace_csv(const std::vector<ReplayDecision>& decisions,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open \"" + path + "\" for writing");
  out << decision_trace_csv(decisions);
  if (!out.flush()) throw IoError("failed writing \"" + path + "\"");
}

}  // namespace lcrank
