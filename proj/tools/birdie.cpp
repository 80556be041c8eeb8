// birdie: transform | train | eval | curriculum-sim | scan-bench
//
// Exit codes: 0 ok, 1 usage error, 2 runtime error.

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "birdie/config.hpp"
#include "birdie/render.hpp"
#include "birdie/scan.hpp"
#include "birdie/sim_config.hpp"
#include "birdie/train.hpp"

namespace {

using namespace birdie;

// Thrown for bad arguments the parser itself cannot catch.
struct UsageError : Error {
  using Error::Error;
};

std::uint64_t seed_or_env(const std::optional<std::uint64_t>& flag) {
  if (const char* s = std::getenv("BIRDIE_SEED"); s && *s) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw UsageError(std::string("BIRDIE_SEED is not an integer: '") + s + "'");
    }
  }
  if (!flag) throw UsageError("a seed is required (--seed or BIRDIE_SEED)");
  return *flag;
}

// A config that does not parse or validate is the caller's mistake.
template <class F>
auto usage_checked(F&& load) {
  try {
    return load();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::ofstream open_file(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

// ---------------------------------------------------------------------------

struct TransformArgs {
  std::string objective, input, out, tokens = "bytes";
  std::optional<std::uint64_t> seed;
  bool paradigm = false;
};

int cmd_transform(const TransformArgs& a) {
  ObjectiveConfig cfg;
  try {
    cfg = parse_objective(a.objective);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const std::uint64_t seed = seed_or_env(a.seed);
  if (a.tokens != "bytes" && a.tokens != "words") throw UsageError("--tokens must be bytes or words");
  const auto docs = read_lines(a.input);
  if (docs.empty()) throw Error("input '" + a.input + "' has no documents");

  WordCodec words;
  std::vector<TransformedSample> samples;
  std::vector<TrainingSample> laid;
  std::ofstream dump = open_file(a.out + ".txt");
  const auto render = [&](const TokenSeq& ids) { return a.tokens == "words" ? words.render(ids) : render_bytes(ids); };
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const TokenSeq seq = a.tokens == "words" ? words.encode(docs[i]) : encode(docs[i]);
    Rng rng(seed + i);
    TransformedSample s = transform(seq, cfg, rng);
    if (a.paradigm) s = apply_paradigm(std::move(s), cfg.cls, rng);
    dump << "# sample " << i << "\n"
         << "objective: " << cfg.name() << "\n"
         << "seed: " << seed + i << "\n"
         << "prefix_len: " << s.prefix_len << "\n"
         << "In: " << render(s.input_ids) << "\n"
         << "Tgt: " << render(s.target_ids) << "\n\n";
    laid.push_back(layout_sample(s));
  }
  // One sample per row, all rows padded to the longest.
  std::size_t max_len = 0;
  for (const auto& s : laid) max_len = std::max(max_len, s.size());
  std::vector<PackedBatch> rows;
  for (const auto& s : laid) rows.push_back(pack(std::span(&s, 1), max_len).front());
  write_packed(a.out, rows);
  std::cout << "wrote " << laid.size() << " samples to " << a.out << ".{txt,ids,targets,loss,reset,seg} (row length "
            << max_len << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  bool resume = false;
  std::size_t stop_after = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = usage_checked([&] { return load_config(a.config); });
  Trainer tr(cfg);
  TrainOptions opt;
  opt.resume = a.resume;
  opt.stop_after = a.stop_after;
  opt.log = a.quiet ? nullptr : &std::cerr;
  const TrainSummary s = tr.run(opt);
  std::cout << "trained " << s.steps << " steps to " << tr.step() << "; loss " << s.first_loss << " -> " << s.last_loss
            << "; artifacts in " << cfg.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string config, checkpoint, task, out, items;
  std::size_t samples = 64;
  std::string queries = "1,2,4,8,16,32";
  std::size_t min_entries = 10, max_entries = 35;
  std::size_t min_len = 8, max_len = 64;
};

const std::vector<std::string> kTasks = {"phonebook", "selective-copy", "copy", "infilling"};

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw UsageError("bad list entry '" + item + "' in '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list '" + s + "'");
  return out;
}

int cmd_eval(const EvalArgs& a) {
  if (std::find(kTasks.begin(), kTasks.end(), a.task) == kTasks.end()) {
    std::string known;
    for (const auto& t : kTasks) known += (known.empty() ? "" : ", ") + t;
    throw UsageError("unknown task '" + a.task + "'; available tasks: " + known);
  }
  const RunConfig cfg = usage_checked([&] { return load_config(a.config); });
  Model<float> model(cfg.model);
  load_model(model, a.checkpoint);
  const PromptMode mode = cfg.mixture == MixtureMode::NextToken ? PromptMode::Causal : PromptMode::Prefix;
  const Decoder dec = make_decoder(model, mode);

  std::ofstream file;
  if (!a.out.empty()) file = open_file(a.out);
  std::ostream& out = a.out.empty() ? std::cout : file;
  out << std::setprecision(6);

  if (a.task == "phonebook") {
    const auto qs = parse_list(a.queries);
    out << "num_queries,accuracy,all_correct_rate\n";
    for (const auto& r : eval_phonebook(dec, qs, a.min_entries, a.max_entries, a.samples, cfg.seed)) {
      out << r.num_queries << "," << r.accuracy << "," << r.all_correct_rate << "\n";
    }
  } else if (a.task == "selective-copy") {
    std::vector<ObjectiveConfig> configs;
    for (const auto& c : cfg.objective_grid()) {
      if (c.cls == ObjectiveClass::SelectiveCopying) configs.push_back(c);
    }
    if (configs.empty()) {
      for (const int spans : {1, 2})
        for (const auto p : {ContextPlacement::Before, ContextPlacement::After})
          configs.push_back(make_selective_copying({96, 256}, spans, p));
    }
    const auto corpus = make_corpus(cfg.corpus, cfg.seed ^ 0x40e1ULL);
    const auto acc = eval_selective_copy(
        dec, configs, [&](std::size_t, Rng& rng) {
          return corpus->window(rng, static_cast<std::size_t>(rng.uniform_int(96, 256)));
        },
        a.samples, cfg.seed);
    out << "config,accuracy\n";
    for (std::size_t i = 0; i < configs.size(); ++i) out << configs[i].name() << "," << acc[i] << "\n";
  } else if (a.task == "copy") {
    const auto corpus = make_corpus(cfg.corpus, cfg.seed ^ 0x40e1ULL);
    out << "min_len,max_len,accuracy\n";
    out << a.min_len << "," << a.max_len << ","
        << greedy_accuracy(dec, copy_source(*corpus, a.min_len, a.max_len), a.samples, cfg.seed) << "\n";
  } else {
    if (a.items.empty()) throw UsageError("task infilling needs --items <json>");
    const auto items = load_infilling(a.items);
    const ChoiceScorer scorer = model_choice_scorer(model, mode);
    out << "item,chosen,label,correct\n";
    std::size_t ok = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const InfillingResult r = score_infilling(scorer, items[i]);
      ok += r.chosen == items[i].label;
      out << i << "," << r.chosen << "," << items[i].label << "," << (r.chosen == items[i].label ? 1 : 0) << "\n";
    }
    std::cerr << "infilling accuracy " << (items.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(items.size()))
              << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SimArgs {
  std::string config, out;
};

int cmd_curriculum_sim(const SimArgs& a) {
  const SimRunConfig sc = usage_checked([&] { return load_sim_config(a.config); });
  const ClassMap classes = sc.classes();
  const SimDynamics dyn = sc.dynamics();
  Controller ctl(classes, sc.controller, sc.controller_seed);
  const SimResult r = simulate_environment(dyn, classes, &ctl, sc.steps, sc.seed);

  std::ofstream file;
  if (!a.out.empty()) file = open_file(a.out);
  std::ostream& out = a.out.empty() ? std::cout : file;
  for (const auto& row : r.schedule.trace) out << row.to_json().dump() << "\n";

  std::cerr << "controller final class-mean loss " << r.final_class_mean << "\n";
  const Action& fin = ctl.action();
  const auto best = static_cast<std::size_t>(std::max_element(fin.begin(), fin.end()) - fin.begin());
  std::cerr << "final action argmax " << best << " (p = " << fin[best] << "), dominant arm "
            << sc.dominant_index(classes.size()) << "\n";
  if (sc.baseline) {
    const SimResult b = simulate_environment(dyn, classes, nullptr, sc.steps, sc.seed);
    std::cerr << "uniform baseline final class-mean loss " << b.final_class_mean << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string lengths = "256,1024,4096", widths = "16,128";
  std::size_t reps = 5, workers = 1, chunk = kDefaultScanChunk;
  std::uint64_t seed = 0;
};

int cmd_scan_bench(const BenchArgs& a) {
  std::cout << "L,N,kernel,ns/element\n";
  for (const std::size_t L : parse_list(a.lengths)) {
    for (const std::size_t N : parse_list(a.widths)) {
      Rng rng(a.seed ^ Rng::mix(L * 7919 + N));
      std::vector<double> ga(L * N), gb(L * N);
      for (auto& v : ga) v = rng.uniform(0.5, 1.0);
      for (auto& v : gb) v = rng.normal();
      std::vector<std::uint8_t> reset(L, kContinue);
      reset[0] = kNewSample;
      for (std::size_t t = L / 2; t < L; ++t) reset[t] = kCausal;
      const ScanInputs<double> in{ga, gb, reset, L, N};
      const std::pair<const char*, std::function<std::vector<double>()>> kernels[] = {
          {"sequential_forward", [&] { return scan_seq_forward(in); }},
          {"sequential_reverse", [&] { return scan_seq_reverse(in); }},
          {"parallel_forward", [&] { return scan_parallel(in, Direction::Forward, {a.chunk, a.workers}); }},
          {"parallel_reverse", [&] { return scan_parallel(in, Direction::Reverse, {a.chunk, a.workers}); }},
          {"bidirectional", [&] { return scan_bidirectional(in); }},
      };
      for (const auto& [name, run] : kernels) {
        double best = 1e300;
        for (std::size_t r = 0; r < std::max<std::size_t>(1, a.reps); ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          const auto h = run();
          const auto t1 = std::chrono::steady_clock::now();
          if (h.empty() && L * N > 0) throw Error("scan returned nothing");
          best = std::min(best, std::chrono::duration<double, std::nano>(t1 - t0).count());
        }
        std::cout << L << "," << N << "," << name << "," << best / static_cast<double>(L * N) << "\n";
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Birdie desk-scale laboratory"};
  app.require_subcommand(1);

  TransformArgs ta;
  auto* transform_cmd = app.add_subcommand("transform", "apply one objective to every line of a text file");
  transform_cmd->add_option("--objective,-o", ta.objective, "objective name, e.g. infilling/len32-64/mask0.15/span3")->required();
  transform_cmd->add_option("--input,-i", ta.input, "input text, one document per line")->required()->check(CLI::ExistingFile);
  transform_cmd->add_option("--out", ta.out, "output prefix")->required();
  transform_cmd->add_option("--seed", ta.seed, "rng seed (BIRDIE_SEED overrides)");
  transform_cmd->add_option("--tokens", ta.tokens, "bytes or words")->check(CLI::IsMember({"bytes", "words"}));
  transform_cmd->add_flag("--paradigm", ta.paradigm, "attach the paradigm token");

  TrainArgs tra;
  auto* train_cmd = app.add_subcommand("train", "pre-train a model from a run config");
  train_cmd->add_option("--config,-c", tra.config, "run config (key = value)")->required()->check(CLI::ExistingFile);
  train_cmd->add_flag("--resume", tra.resume, "continue from out_dir/checkpoint.bin if present");
  train_cmd->add_option("--stop-after", tra.stop_after, "stop after this step (checkpointing there)");
  train_cmd->add_flag("--quiet,-q", tra.quiet, "no progress lines");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a task");
  eval_cmd->add_option("--config,-c", ea.config, "run config the checkpoint was trained with")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--task,-t", ea.task, "phonebook, selective-copy, copy or infilling")->required();
  eval_cmd->add_option("--out", ea.out, "CSV output (default stdout)");
  eval_cmd->add_option("--samples,-n", ea.samples, "samples per row");
  eval_cmd->add_option("--queries", ea.queries, "phonebook query counts, comma separated");
  eval_cmd->add_option("--min-entries", ea.min_entries, "phonebook size lower bound");
  eval_cmd->add_option("--max-entries", ea.max_entries, "phonebook size upper bound");
  eval_cmd->add_option("--min-len", ea.min_len, "copy length lower bound");
  eval_cmd->add_option("--max-len", ea.max_len, "copy length upper bound");
  eval_cmd->add_option("--items", ea.items, "infilling items (JSON)");

  SimArgs sa;
  auto* sim_cmd = app.add_subcommand("curriculum-sim", "run the controller on simulated loss dynamics");
  sim_cmd->add_option("--config,-c", sa.config, "dynamics config (key = value)")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--out", sa.out, "trace JSONL (default stdout)");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("scan-bench", "time the scan kernels");
  bench_cmd->add_option("--lengths,-L", ba.lengths, "sequence lengths, comma separated");
  bench_cmd->add_option("--widths,-N", ba.widths, "state widths, comma separated");
  bench_cmd->add_option("--reps", ba.reps, "repetitions (best is kept)");
  bench_cmd->add_option("--workers", ba.workers, "parallel scan worker threads");
  bench_cmd->add_option("--chunk", ba.chunk, "parallel scan chunk size");
  bench_cmd->add_option("--seed", ba.seed, "input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*transform_cmd) return cmd_transform(ta);
    if (*train_cmd) return cmd_train(tra);
    if (*eval_cmd) return cmd_eval(ea);
    if (*sim_cmd) return cmd_curriculum_sim(sa);
    if (*bench_cmd) return cmd_scan_bench(ba);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
