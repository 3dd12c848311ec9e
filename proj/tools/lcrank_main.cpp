#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lcrank/corpus.hpp"
#include "lcrank/ranker.hpp"
#include "lcrank/report.hpp"
#include "lcrank/search_sim.hpp"
#include "lcrank/termination.hpp"

namespace {

using lcrank::IoError;
using lcrank::ValidationError;

// Every CSV output starts with the fully resolved option set so a result file
// documents the command that produced it.
std::string config_comment_block(const CLI::App& cmd) {
  std::istringstream in(cmd.config_to_str(true, false));
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out << "# " << line << '\n';
  }
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open \"" + path + "\" for writing");
  out << content;
  if (!out) throw IoError("failed writing \"" + path + "\"");
}

void make_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory \"" + dir + "\": " + ec.message());
}

int parse_int_strict(const std::string& field, const std::string& what) {
  std::size_t used = 0;
  int value = 0;
  try {
    value = std::stoi(field, &used);
  } catch (const std::exception&) {
    throw ValidationError("bad " + what + " \"" + field + "\"");
  }
  if (used != field.size()) throw ValidationError("bad " + what + " \"" + field + "\"");
  return value;
}

// "cadence:<c>" expands to the checkpoint grid c, 2c, ... below the longest
// training curve; otherwise a comma list of explicit lengths (0 allowed).
std::vector<int> parse_lengths(const std::string& spec, int max_epochs) {
  std::vector<int> lengths;
  const std::string prefix = "cadence:";
  if (spec.rfind(prefix, 0) == 0) {
    const int cadence = parse_int_strict(spec.substr(prefix.size()), "cadence");
    if (cadence < 1) throw ValidationError("cadence must be at least 1");
    for (int l = cadence; l < max_epochs; l += cadence) lengths.push_back(l);
  } else {
    std::istringstream in(spec);
    std::string field;
    while (std::getline(in, field, ',')) {
      const int l = parse_int_strict(field, "length");
      if (l < 0 || l > max_epochs)
        throw ValidationError("length " + std::to_string(l) + " outside [0, " +
                              std::to_string(max_epochs) + "]");
      lengths.push_back(l);
    }
  }
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
  if (lengths.empty()) throw ValidationError("--lengths \"" + spec + "\" yields no lengths");
  return lengths;
}

// Model options shared by the commands that train (train, rank, simulate,
// optimize). The enum crosses the flag boundary as its string name.
struct ModelFlags {
  lcrank::ModelConfig config;
  std::string curve_encoder = lcrank::curve_encoder_name(config.curve_encoder_variant);

  void add_to(CLI::App* cmd) {
    cmd->add_option("--steps", config.steps, "Adam steps per trained length")
        ->capture_default_str();
    cmd->add_option("--pairs-per-step", config.pairs_per_step, "Ranked pairs sampled per step")
        ->capture_default_str();
    cmd->add_option("--filters", config.filters_per_kernel, "Curve conv filters per kernel size")
        ->capture_default_str();
    cmd->add_option("--arch-embed", config.arch_embed_dim, "Architecture embedding width")
        ->capture_default_str();
    cmd->add_option("--arch-hidden", config.arch_hidden_dim, "Architecture LSTM width")
        ->capture_default_str();
    cmd->add_option("--dataset-embed", config.dataset_embed_dim, "Dataset embedding width")
        ->capture_default_str();
    cmd->add_option("--combiner", config.combiner_hidden, "Combiner hidden width")
        ->capture_default_str();
    cmd->add_option("--alpha", config.alpha, "Ranking-loss weight in [0,1]")
        ->capture_default_str();
    cmd->add_option("--lambda", config.perf_head_weight, "Final-performance head weight")
        ->capture_default_str();
    cmd->add_option("--learning-rate", config.adam_learning_rate, "Adam learning rate")
        ->capture_default_str();
    cmd->add_option("--rec-samples", config.rec_samples_per_step,
                    "Runs entering the reconstruction loss per step")
        ->capture_default_str();
    cmd->add_option("--model-seed", config.seed, "Model initialization/sampling seed")
        ->capture_default_str();
    cmd->add_flag("--cross-dataset-pairs", config.cross_dataset_pairs,
                  "Sample ranked pairs across datasets");
    cmd->add_option("--curve-encoder", curve_encoder, "conv_global_max or best_value_only")
        ->capture_default_str();
  }

  lcrank::ModelConfig resolved() const {
    lcrank::ModelConfig c = config;
    c.curve_encoder_variant = lcrank::curve_encoder_from(curve_encoder);
    c.validate();
    return c;
  }
};

// Termination-policy options shared by simulate and optimize.
struct PolicyFlags {
  std::string policy_name = "none";
  double delta = 0.45;
  int cadence = 3;
  int sh_runs = 8;
  int sh_interval = 3;
  int hb_resource = 81;
  int hb_eta = 3;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--policy", policy_name,
                    "none, lcranknet, last_value, successive_halving or hyperband")
        ->capture_default_str();
    cmd->add_option("--delta", delta, "Stop when the modeled win probability is <= delta")
        ->capture_default_str();
    cmd->add_option("--cadence", cadence, "Epochs between termination checks")
        ->capture_default_str();
    cmd->add_option("--sh-runs", sh_runs, "Successive-halving cohort size")
        ->capture_default_str();
    cmd->add_option("--sh-interval", sh_interval, "Epochs per halving round")
        ->capture_default_str();
    cmd->add_option("--hb-resource", hb_resource, "Hyperband maximum resource R")
        ->capture_default_str();
    cmd->add_option("--hb-eta", hb_eta, "Hyperband elimination ratio")->capture_default_str();
  }

  lcrank::TerminationPolicy resolved() const {
    lcrank::TerminationPolicy p;
    p.kind = lcrank::policy_kind_from(policy_name);
    p.delta = delta;
    p.cadence = cadence;
    p.sh_initial_runs = sh_runs;
    p.sh_interval = sh_interval;
    p.hb_max_resource = hb_resource;
    p.hb_eta = hb_eta;
    p.validate();
    return p;
  }
};

// A stopping policy needs ranking models: loaded from --bank-dir when given,
// otherwise trained in process on the leave-one-dataset-out training side.
std::optional<lcrank::ModelBank> make_bank(const lcrank::TerminationPolicy& policy,
                                           const std::string& bank_dir,
                                           const lcrank::Corpus& corpus,
                                           const std::string& held_out,
                                           const ModelFlags& model, bool always) {
  std::optional<lcrank::ModelBank> bank;
  if (policy.kind == lcrank::PolicyKind::lcranknet ||
      (always && policy.kind != lcrank::PolicyKind::none)) {
    if (!bank_dir.empty()) {
      bank.emplace(lcrank::ModelBank::from_directory(bank_dir));
    } else {
      bank.emplace(lcrank::lodo_split(corpus, held_out).first, model.resolved());
    }
  }
  return bank;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning-curve ranking, early-termination replay and search experiments",
               "lcrank"};
  app.require_subcommand(1);
  // Config files are only processed on the root app, so the overlay lives
  // here; keys sit under one [subcommand] section per command.
  app.set_config("--config", "",
                 "Read options from an INI file with a [subcommand] section per command");

  // --- gen-corpus -----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus (JSONL)");
  std::string gen_out;
  lcrank::SyntheticSpec gen_spec;
  gen_spec.n_datasets = 5;
  gen_spec.runs_per_dataset = 100;
  gen_spec.epochs = 100;
  gen->add_option("--out", gen_out, "Output JSONL path")->required();
  gen->add_option("--datasets", gen_spec.n_datasets, "Number of datasets")->capture_default_str();
  gen->add_option("--runs", gen_spec.runs_per_dataset, "Runs per dataset")->capture_default_str();
  gen->add_option("--epochs", gen_spec.epochs, "Epochs per curve")->capture_default_str();
  gen->add_option("--noise", gen_spec.noise_sd, "Gaussian noise sd")->capture_default_str();
  gen->add_option("--seed", gen_spec.seed, "Generator seed")->capture_default_str();
  gen->callback([&] {
    std::cout << config_comment_block(*gen);
    const lcrank::Corpus corpus = lcrank::synth_generate(gen_spec);
    lcrank::save_jsonl(corpus, gen_out);
    std::cout << corpus.records.size() << " records -> " << gen_out << '\n';
  });

  // --- train ----------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train the per-length model bank on a LODO split");
  std::string train_corpus, train_holdout, train_lengths = "cadence:3", train_out_dir;
  ModelFlags train_model;
  train->add_option("--corpus", train_corpus, "Corpus JSONL path")->required();
  train->add_option("--holdout", train_holdout, "Held-out dataset id")->required();
  train->add_option("--lengths", train_lengths, "Comma list of curve lengths or cadence:<c>")
      ->capture_default_str();
  train->add_option("--out-dir", train_out_dir, "Checkpoint directory")->required();
  train_model.add_to(train);
  train->callback([&] {
    std::cout << config_comment_block(*train);
    const lcrank::Corpus corpus = lcrank::load_jsonl(train_corpus);
    const std::vector<lcrank::RunRecord> records = lcrank::lodo_split(corpus, train_holdout).first;
    int max_epochs = 0;
    for (const lcrank::RunRecord& r : records) max_epochs = std::max(max_epochs, r.epochs());
    const std::vector<int> lengths = parse_lengths(train_lengths, max_epochs);
    const lcrank::ModelConfig config = train_model.resolved();
    make_directory(train_out_dir);
    nlohmann::ordered_json manifest;
    manifest["schema_version"] = 1;
    manifest["holdout"] = train_holdout;
    manifest["lengths"] = lengths;
    nlohmann::ordered_json files = nlohmann::ordered_json::object();
    for (int l : lengths) {
      const lcrank::RankerParams params = lcrank::train_fl(records, l, config);
      const std::string file = "f_" + std::to_string(l) + ".json";
      lcrank::save_checkpoint(params, train_out_dir + "/" + file);
      files[std::to_string(l)] = file;
      std::cout << "wrote " << train_out_dir << "/" << file << '\n';
    }
    manifest["checkpoints"] = files;
    write_text_file(train_out_dir + "/manifest.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << train_out_dir << "/manifest.json" << '\n';
  });

  // --- rank -----------------------------------------------------------------
  auto* rank = app.add_subcommand(
      "rank", "Correlate predicted and true rankings of held-out runs at several lengths");
  std::string rank_corpus, rank_holdout, rank_scorer = "lcranknet", rank_out;
  std::vector<double> rank_fractions{0.0, 0.1, 0.3};
  int rank_reps = 10, rank_n_test = 50, rank_n_train = 5;
  std::uint64_t rank_seed = 0;
  ModelFlags rank_model;
  rank->add_option("--corpus", rank_corpus, "Corpus JSONL path")->required();
  rank->add_option("--holdout", rank_holdout, "Held-out dataset id")->required();
  rank->add_option("--scorer", rank_scorer, "lcranknet, last_value, oracle or random")
      ->capture_default_str();
  rank->add_option("--fractions", rank_fractions, "Curve-length fractions to evaluate")
      ->delimiter(',')
      ->capture_default_str();
  rank->add_option("--reps", rank_reps, "Repetitions per fraction")->capture_default_str();
  rank->add_option("--n-test", rank_n_test, "Ranked test runs per repetition")
      ->capture_default_str();
  rank->add_option("--n-train", rank_n_train, "Revealed in-dataset training runs")
      ->capture_default_str();
  rank->add_option("--seed", rank_seed, "Protocol sampling seed")->capture_default_str();
  rank->add_option("--out", rank_out, "Results CSV path")->required();
  rank_model.add_to(rank);
  rank->callback([&] {
    const lcrank::Corpus corpus = lcrank::load_jsonl(rank_corpus);
    const lcrank::RankingEvalResult result = lcrank::ranking_experiment(
        corpus, rank_holdout, lcrank::ranking_scorer_from(rank_scorer), rank_model.resolved(),
        rank_reps, rank_seed, rank_fractions, rank_n_test, rank_n_train);
    write_text_file(rank_out, config_comment_block(*rank) +
                                  lcrank::results_csv(lcrank::ranking_result_rows(result)));
    for (std::size_t i = 0; i < result.fractions.size(); ++i)
      std::cout << "fraction " << result.fractions[i] << ": mean spearman "
                << result.mean_correlation[i] << " (sd " << result.sd_correlation[i] << ")\n";
    std::cout << "wrote " << rank_out << '\n';
  });

  // --- simulate ---------------------------------------------------------------
  auto* sim = app.add_subcommand(
      "simulate", "Replay seeded random searches on the held-out dataset under a policy");
  std::string sim_corpus, sim_holdout, sim_bank_dir, sim_out, sim_trace_dir;
  std::vector<std::uint64_t> sim_seeds{0};
  int sim_max_runs = 0;
  PolicyFlags sim_policy;
  ModelFlags sim_model;
  sim->add_option("--corpus", sim_corpus, "Corpus JSONL path")->required();
  sim->add_option("--holdout", sim_holdout, "Held-out dataset id")->required();
  sim->add_option("--order-seeds", sim_seeds, "Replay order seeds")
      ->delimiter(',')
      ->capture_default_str();
  sim->add_option("--max-runs", sim_max_runs, "Limit on replayed runs (0 = all)")
      ->capture_default_str();
  sim->add_option("--bank-dir", sim_bank_dir, "Load model checkpoints instead of training");
  sim->add_option("--trace-dir", sim_trace_dir, "Write per-seed decision traces here");
  sim->add_option("--out", sim_out, "Results CSV path")->required();
  sim_policy.add_to(sim);
  sim_model.add_to(sim);
  sim->callback([&] {
    const lcrank::Corpus corpus = lcrank::load_jsonl(sim_corpus);
    const lcrank::TerminationPolicy policy = sim_policy.resolved();
    std::optional<lcrank::ModelBank> bank =
        make_bank(policy, sim_bank_dir, corpus, sim_holdout, sim_model, false);
    if (!sim_trace_dir.empty()) make_directory(sim_trace_dir);
    std::vector<lcrank::ResultRow> rows;
    for (std::uint64_t seed : sim_seeds) {
      const lcrank::ReplayResult r = lcrank::random_search_replay(
          corpus, sim_holdout, policy, seed, bank ? &*bank : nullptr, sim_max_runs);
      rows.push_back(lcrank::replay_result_row(r));
      if (!sim_trace_dir.empty())
        lcrank::write_decision_trace_csv(
            r.decisions,
            sim_trace_dir + "/trace_" + policy.name() + "_" + std::to_string(seed) + ".csv");
      std::cout << "seed " << seed << ": chose " << r.chosen_run_id << " (final "
                << r.chosen_final << ", regret " << r.regret << ", epochs " << r.epochs_consumed
                << ")\n";
    }
    write_text_file(sim_out, config_comment_block(*sim) + lcrank::results_csv(rows));
    std::cout << "wrote " << sim_out << '\n';
  });

  // --- optimize ---------------------------------------------------------------
  auto* opt = app.add_subcommand(
      "optimize", "Regularized evolution over one dataset's stored runs");
  std::string opt_corpus, opt_dataset, opt_bank_dir, opt_out;
  lcrank::EvolutionConfig opt_config;
  PolicyFlags opt_policy;
  ModelFlags opt_model;
  opt->add_option("--corpus", opt_corpus, "Corpus JSONL path")->required();
  opt->add_option("--dataset", opt_dataset, "Dataset whose runs form the search space")
      ->required();
  opt->add_option("--population", opt_config.population, "Population size")
      ->capture_default_str();
  opt->add_option("--tournament", opt_config.tournament, "Tournament size")
      ->capture_default_str();
  opt->add_option("--budget", opt_config.budget, "Total evaluations")->capture_default_str();
  opt->add_option("--seed", opt_config.seed, "Evolution seed")->capture_default_str();
  opt->add_option("--bank-dir", opt_bank_dir, "Load model checkpoints instead of training");
  opt->add_option("--out", opt_out, "Incumbent-trace CSV path")->required();
  opt_policy.add_to(opt);
  opt_model.add_to(opt);
  opt->callback([&] {
    const lcrank::Corpus corpus = lcrank::load_jsonl(opt_corpus);
    const lcrank::TerminationPolicy policy = opt_policy.resolved();
    std::optional<lcrank::ModelBank> bank =
        make_bank(policy, opt_bank_dir, corpus, opt_dataset, opt_model, true);
    const lcrank::EvolutionResult result = lcrank::regularized_evolution(
        corpus, opt_dataset, policy, opt_config, bank ? &*bank : nullptr);
    std::ostringstream csv;
    csv << config_comment_block(*opt) << "evaluation,epochs,best_objective\n";
    for (std::size_t i = 0; i < result.incumbent_trace.size(); ++i)
      csv << (i + 1) << ',' << result.incumbent_trace[i].first << ','
          << lcrank::format_double(result.incumbent_trace[i].second) << '\n';
    write_text_file(opt_out, csv.str());
    std::cout << "best " << result.best_run_id << " objective " << result.best_objective
              << " after " << result.evaluations << " evaluations (" << result.epochs_consumed
              << " epochs)\n"
              << "wrote " << opt_out << '\n';
  });

  // --- report -----------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "Render a results CSV into SVG charts");
  std::string rep_results, rep_out_dir;
  rep->add_option("--results", rep_results, "Results CSV path")->required();
  rep->add_option("--out-dir", rep_out_dir, "Chart output directory")->required();
  rep->callback([&] {
    const std::vector<lcrank::ResultRow> rows = lcrank::read_results_csv(rep_results);
    bool has_ranking = false, has_replay = false;
    for (const lcrank::ResultRow& r : rows) {
      has_ranking = has_ranking || r.protocol == "ranking";
      has_replay = has_replay || r.protocol == "replay";
    }
    if (!has_ranking && !has_replay)
      throw ValidationError("no ranking or replay rows in \"" + rep_results + "\"");
    make_directory(rep_out_dir);
    if (has_ranking) {
      write_text_file(rep_out_dir + "/ranking.svg", lcrank::ranking_chart_svg(rows));
      std::cout << "wrote " << rep_out_dir << "/ranking.svg" << '\n';
    }
    if (has_replay) {
      write_text_file(rep_out_dir + "/replay.svg", lcrank::replay_chart_svg(rows));
      std::cout << "wrote " << rep_out_dir << "/replay.svg" << '\n';
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const lcrank::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const lcrank::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const lcrank::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
