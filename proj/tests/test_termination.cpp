#include "doctest.h"

#include "lcrank/termination.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace lcrank;

namespace {

Corpus tiny_corpus(std::uint64_t seed = 9, int datasets = 2, int runs = 10, int epochs = 24) {
  SyntheticSpec spec;
  spec.n_datasets = datasets;
  spec.runs_per_dataset = runs;
  spec.epochs = epochs;
  spec.seed = seed;
  return synth_generate(spec);
}

ModelConfig bank_config(std::uint64_t seed = 13) {
  ModelConfig c;
  c.filters_per_kernel = 4;
  c.arch_embed_dim = 6;
  c.arch_hidden_dim = 8;
  c.dataset_embed_dim = 4;
  c.combiner_hidden = 12;
  c.steps = 60;
  c.pairs_per_step = 32;
  c.rec_samples_per_step = 4;
  c.seed = seed;
  return c;
}

// Closed-form halving budget: every active run advances `r` epochs per round,
// half (floor) survive, and the last survivor takes one extra round.
long long sh_budget_oracle(int n, int r) {
  if (n == 1) return 0;  // schedule special-cases a single run
  long long total = 0;
  int active = n;
  while (active > 1) {
    total += static_cast<long long>(active) * r;
    active /= 2;
  }
  return total + r;
}

}  // namespace

TEST_CASE("policy constructors validate their parameters") {
  CHECK_THROWS_AS(TerminationPolicy::lcranknet(-0.1), ValidationError);
  CHECK_THROWS_AS(TerminationPolicy::lcranknet(1.5), ValidationError);
  CHECK_THROWS_AS(TerminationPolicy::lcranknet(0.5, 0), ValidationError);
  CHECK_THROWS_AS(TerminationPolicy::successive_halving(0, 3), ValidationError);
  CHECK_THROWS_AS(TerminationPolicy::hyperband(81, 1), ValidationError);
  CHECK(TerminationPolicy::none().name() == "none");
  CHECK(TerminationPolicy::lcranknet(0.45).name() == "lcranknet");
  CHECK(policy_kind_from("hyperband") == PolicyKind::hyperband);
  CHECK_THROWS_AS(policy_kind_from("secret"), ValidationError);
}

TEST_CASE("halving schedule follows the elimination pattern") {
  auto by_index = [](int run, int) { return static_cast<double>(run); };

  SUBCASE("eight runs, interval three") {
    const std::vector<int> stops = successive_halving_schedule(8, 3, 100, by_index);
    CHECK(stops == std::vector<int>{3, 3, 3, 3, 6, 6, 9, 12});
    CHECK(std::accumulate(stops.begin(), stops.end(), 0) == 45);
  }

  SUBCASE("single run trains to completion") {
    CHECK(successive_halving_schedule(1, 3, 50, by_index) == std::vector<int>{50});
  }

  SUBCASE("equal values stop the later run") {
    auto equal = [](int, int) { return 0.5; };
    CHECK(successive_halving_schedule(2, 4, 100, equal) == std::vector<int>{8, 4});
  }

  SUBCASE("curve length caps every stop") {
    const std::vector<int> stops = successive_halving_schedule(8, 3, 5, by_index);
    for (std::size_t i = 0; i < 4; ++i) CHECK(stops[i] == 3);
    for (std::size_t i = 4; i < 8; ++i) CHECK(stops[i] == 5);
  }

  SUBCASE("budget matches the closed form") {
    for (int n : {2, 3, 5, 8, 16, 31})
      for (int r : {1, 2, 3, 7}) {
        const std::vector<int> stops = successive_halving_schedule(n, r, 100000, by_index);
        CHECK(std::accumulate(stops.begin(), stops.end(), 0LL) == sh_budget_oracle(n, r));
      }
  }
}

TEST_CASE("hyperband brackets follow the published formulas") {
  const std::vector<Bracket> brackets = hyperband_brackets(81, 3);
  REQUIRE(brackets.size() == 5);

  // Independent oracle straight from the formulas.
  const int s_max = static_cast<int>(std::floor(std::log(81.0) / std::log(3.0)));
  CHECK(s_max == 4);
  for (const Bracket& b : brackets) {
    const int s = b.s;
    const int n = static_cast<int>(std::ceil((s_max + 1) / static_cast<double>(s + 1) *
                                             std::pow(3.0, s)));
    CHECK(b.initial == n);
    int survivors = n;
    for (std::size_t i = 0; i < b.rounds.size(); ++i) {
      CHECK(b.rounds[i].survivors == survivors);
      const int resource = static_cast<int>(81.0 * std::pow(3.0, static_cast<int>(i) - s));
      CHECK(b.rounds[i].resource == std::max(1, resource));
      survivors /= 3;
    }
    CHECK(b.rounds.size() == static_cast<std::size_t>(s) + 1);
    CHECK(b.rounds.back().resource == 81);
  }
  CHECK(brackets[0].initial == 81);
  CHECK(brackets[1].initial == 34);
  CHECK(brackets[2].initial == 15);
  CHECK(brackets[3].initial == 8);
  CHECK(brackets[4].initial == 5);

  SUBCASE("per-bracket budget stays within (s_max+1)*R with resume accounting") {
    for (const Bracket& b : brackets) {
      long long budget = 0;
      int previous = 0;
      for (const BracketRound& round : b.rounds) {
        budget += static_cast<long long>(round.survivors) * (round.resource - previous);
        previous = round.resource;
      }
      CHECK(budget <= static_cast<long long>(s_max + 1) * 81);
    }
  }

  SUBCASE("unit resource") {
    const std::vector<Bracket> tiny = hyperband_brackets(1, 2);
    REQUIRE(tiny.size() == 1);
    CHECK(tiny[0].initial == 1);
    REQUIRE(tiny[0].rounds.size() == 1);
    CHECK(tiny[0].rounds[0].resource == 1);
  }
}

TEST_CASE("last-value comparison") {
  CHECK_FALSE(last_value_stop({0.5, 0.91}, 0.90));
  CHECK(last_value_stop({0.5, 0.80}, 0.90));
  CHECK_FALSE(last_value_stop({0.5, 0.90}, 0.90));
  CHECK_FALSE(last_value_stop({}, 0.90));
}

TEST_CASE("model bank trains lazily, caches, and bounds the length") {
  const Corpus c = tiny_corpus();
  ModelBank bank(c.records, bank_config());
  CHECK_FALSE(bank.contains(6));
  RankerParams& a = bank.at(6);
  CHECK(bank.contains(6));
  CHECK(&bank.at(6) == &a);

  ModelBank again(c.records, bank_config());
  auto na = a.named_tensors();
  auto nb = again.at(6).named_tensors();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) CHECK(na[i].second->values == nb[i].second->values);

  CHECK_THROWS_AS(bank.at(c.records[0].epochs() + 1), ValidationError);
  CHECK_THROWS_AS(bank.at(-1), ValidationError);
  CHECK_THROWS_AS(ModelBank({}, bank_config()), ValidationError);
}

TEST_CASE("checkpoint decisions honor the incumbent comparison") {
  const Corpus c = tiny_corpus();
  ModelBank bank(c.records, bank_config());
  const NormalizationStats stats = compute_stats(c.records);

  SearchState state;
  CHECK_THROWS_AS(should_stop_lcranknet(c.records[0], 3, state, 0.45, bank, stats),
                  ValidationError);

  state.incumbent = c.records[0];
  state.y_max = 2.0;  // nothing can beat this, so p is always consulted

  const StopDecision never = should_stop_lcranknet(c.records[1], 3, state, 0.0, bank, stats);
  CHECK_FALSE(never.stop);
  CHECK_FALSE(never.max_branch);
  CHECK(never.p > 0.0);
  CHECK(never.p < 1.0);

  const StopDecision always = should_stop_lcranknet(c.records[1], 3, state, 1.0, bank, stats);
  CHECK(always.stop);

  SUBCASE("delta ordering is respected checkpoint by checkpoint") {
    for (int run = 1; run < 6; ++run)
      for (int l : {3, 6, 9}) {
        const StopDecision lo = should_stop_lcranknet(c.records[static_cast<std::size_t>(run)], l,
                                                      state, 0.2, bank, stats);
        const StopDecision hi = should_stop_lcranknet(c.records[static_cast<std::size_t>(run)], l,
                                                      state, 0.7, bank, stats);
        CHECK(lo.p == hi.p);
        if (lo.stop) CHECK(hi.stop);
      }
  }

  SUBCASE("a partial maximum above the incumbent skips the probability") {
    state.y_max = -1.0;  // any normalized value beats this
    const StopDecision d = should_stop_lcranknet(c.records[1], 3, state, 1.0, bank, stats);
    CHECK_FALSE(d.stop);
    CHECK(d.max_branch);
    CHECK(std::isnan(d.p));
  }
}

TEST_CASE("single-run replay handles policies and accounting") {
  const Corpus c = tiny_corpus();
  const NormalizationStats stats = compute_stats(c.records);
  const int L = c.records[0].epochs();

  SUBCASE("none reveals everything and tracks the incumbent") {
    SearchState state;
    const ReplayDecision d0 = replay_policy(c.records[0], state, TerminationPolicy::none(), nullptr, stats);
    CHECK(d0.stop_epoch == L);
    CHECK_FALSE(d0.stopped_early);
    CHECK(d0.trace.empty());
    CHECK(state.epochs_consumed == L);
    REQUIRE(state.incumbent.has_value());
    CHECK(state.incumbent->run_id == c.records[0].run_id);
    CHECK(state.completed_finals.size() == 1);

    const double first_y = state.y_max;
    replay_policy(c.records[1], state, TerminationPolicy::none(), nullptr, stats);
    CHECK(state.epochs_consumed == 2 * L);
    CHECK(state.y_max >= first_y);
    CHECK(state.completed_finals.size() == 2);
  }

  SUBCASE("the first run completes even under an always-stop policy") {
    ModelBank bank(c.records, bank_config());
    SearchState state;
    const TerminationPolicy greedy = TerminationPolicy::lcranknet(1.0, 3);
    const ReplayDecision first = replay_policy(c.records[0], state, greedy, &bank, stats);
    CHECK(first.stop_epoch == L);
    CHECK(first.trace.empty());

    state.y_max = 2.0;  // force the probability branch
    const ReplayDecision second = replay_policy(c.records[1], state, greedy, &bank, stats);
    CHECK(second.stopped_early);
    CHECK(second.stop_epoch == 3);
    CHECK(state.epochs_consumed == L + 3);
    REQUIRE(second.trace.size() == 1);
    CHECK(second.trace[0].stopped);
    CHECK(state.completed_finals.size() == 1);
    CHECK(state.incumbent->run_id == c.records[0].run_id);
  }

  SUBCASE("cohort policies refuse single-run replay") {
    SearchState state;
    CHECK_THROWS_AS(replay_policy(c.records[0], state, TerminationPolicy::successive_halving(8, 3),
                                  nullptr, stats),
                    ValidationError);
  }

  SUBCASE("the lcranknet policy without a bank is an error") {
    SearchState state;
    CHECK_THROWS_AS(replay_policy(c.records[0], state, TerminationPolicy::lcranknet(0.45), nullptr, stats),
                    ValidationError);
  }
}

TEST_CASE("decision traces export as csv") {
  ReplayDecision a;
  a.run_id = "run-1";
  a.trace.push_back({3, 0.5, false, false});
  a.trace.push_back({6, std::nan(""), true, false});
  a.trace.push_back({9, 0.25, false, true});
  a.stop_epoch = 9;
  a.stopped_early = true;
  ReplayDecision b;
  b.run_id = "run-2";

  const std::string csv = decision_trace_csv({a, b});
  CHECK(csv ==
        "run_id,epoch,p,action\n"
        "run-1,3,0.5,continue\n"
        "run-1,6,,continue\n"
        "run-1,9,0.25,stop\n");
}
