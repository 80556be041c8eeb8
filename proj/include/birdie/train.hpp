#pragma once

// Training runs: corpora, the objective data pipeline, the trainer with its
// run artifacts (metrics, curriculum trace, checkpoints, manifest), plus
// supervised fine-tuning and the greedy evaluation helpers.

#include <Eigen/Core>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdie/checkpoint.hpp"
#include "birdie/config.hpp"
#include "birdie/curriculum.hpp"
#include "birdie/model.hpp"
#include "birdie/objectives.hpp"
#include "birdie/optim.hpp"
#include "birdie/packing.hpp"
#include "birdie/tasks.hpp"

namespace birdie {

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Corpora.

class Corpus {
 public:
  virtual ~Corpus() = default;
  // A contiguous run of exactly `len` tokens.
  virtual TokenSeq window(Rng& rng, std::size_t len) const = 0;
};

// Byte text generated on the fly: pseudo-word prose and name/number
// directories. Pure in the rng it is handed.
class SyntheticCorpus final : public Corpus {
 public:
  explicit SyntheticCorpus(std::uint64_t lexicon_seed = 0) {
    Rng rng(Rng::mix(lexicon_seed ^ 0x6c6578ULL));
    static constexpr std::string_view kCons = "bcdfghjklmnprstvwz";
    static constexpr std::string_view kVowels = "aeiou";
    for (std::size_t i = 0; i < kLexicon; ++i) {
      std::string w;
      const std::size_t syl = 1 + rng.index(3);
      for (std::size_t k = 0; k < syl; ++k) {
        w += kCons[rng.index(kCons.size())];
        w += kVowels[rng.index(kVowels.size())];
        if (rng.bernoulli(0.2)) w += kCons[rng.index(kCons.size())];
      }
      words_.push_back(std::move(w));
    }
  }

  std::string prose(Rng& rng) const {
    std::string s;
    const std::size_t sentences = 2 + rng.index(5);
    for (std::size_t i = 0; i < sentences; ++i) {
      const std::size_t n = 4 + rng.index(9);
      for (std::size_t k = 0; k < n; ++k) {
        // skewed toward the front of the lexicon
        const double u = rng.uniform();
        std::string w = words_[static_cast<std::size_t>(u * u * static_cast<double>(kLexicon))];
        if (k == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
        s += w;
        s += k + 1 == n ? ". " : (rng.bernoulli(0.08) ? ", " : " ");
      }
    }
    s.back() = '\n';
    return s;
  }

  static std::string directory(Rng& rng) {
    std::string s = "Directory:\n";
    const std::size_t n = 3 + rng.index(18);
    for (std::size_t i = 0; i < n; ++i) s += make_name(rng) + ": " + make_phone_number(rng) + "\n";
    return s;
  }

  std::string document(Rng& rng) const { return rng.bernoulli(0.5) ? prose(rng) : directory(rng); }

  TokenSeq window(Rng& rng, std::size_t len) const override {
    std::string text;
    while (text.size() < len) text += document(rng);
    text += document(rng);
    const std::size_t off = rng.index(text.size() - len + 1);
    return encode(std::string_view(text).substr(off, len));
  }

 private:
  static constexpr std::size_t kLexicon = 512;
  std::vector<std::string> words_;
};

// Documents from a file (one per line, or length-prefixed records for
// .bin/.rec files), joined by newlines into one stream.
class FileCorpus final : public Corpus {
 public:
  explicit FileCorpus(const std::string& path) {
    const auto ext = std::filesystem::path(path).extension().string();
    const auto docs = (ext == ".bin" || ext == ".rec") ? read_records(path) : read_lines(path);
    for (const auto& d : docs) {
      const TokenSeq t = encode(d);
      stream_.insert(stream_.end(), t.begin(), t.end());
      stream_.push_back(vocab::byte('\n'));
    }
    if (stream_.empty()) throw Error("corpus '" + path + "' is empty");
  }

  TokenSeq window(Rng& rng, std::size_t len) const override {
    if (len > stream_.size()) {
      throw Error("corpus has " + std::to_string(stream_.size()) + " tokens, a window of " + std::to_string(len) +
                  " was requested");
    }
    const std::size_t off = rng.index(stream_.size() - len + 1);
    return TokenSeq(stream_.begin() + static_cast<std::ptrdiff_t>(off),
                    stream_.begin() + static_cast<std::ptrdiff_t>(off + len));
  }

 private:
  TokenSeq stream_;
};

inline std::unique_ptr<Corpus> make_corpus(const std::string& spec, std::uint64_t seed = 0) {
  if (spec == "synthetic") return std::make_unique<SyntheticCorpus>(seed);
  return std::make_unique<FileCorpus>(spec);
}

// ---------------------------------------------------------------------------
// Data pipeline.

// Causal samples (no prefix) get the BOS layout, everything else the
// bidirectional teacher-forced layout.
inline TrainingSample layout_sample(const TransformedSample& s) {
  if (s.prefix_len == 0) return build_causal(s.input_ids, s.target_ids);
  return build_teacher_forced(s.input_ids, s.target_ids);
}

class DataPipeline {
 public:
  DataPipeline(const Corpus& corpus, std::vector<ObjectiveConfig> grid, bool paradigm_tokens, std::size_t max_len)
      : corpus_(corpus), grid_(std::move(grid)), paradigm_(paradigm_tokens), max_len_(max_len) {
    if (grid_.empty()) throw Error("pipeline: empty objective grid");
    for (const auto& c : grid_) c.validate();
  }

  const std::vector<ObjectiveConfig>& grid() const { return grid_; }
  std::size_t max_len() const { return max_len_; }

  TransformedSample transformed(std::size_t config, Rng& rng) const {
    const ObjectiveConfig& cfg = grid_.at(config);
    for (int attempt = 0;; ++attempt) {
      try {
        const auto len = static_cast<std::size_t>(rng.uniform_int(cfg.length_range.first, cfg.length_range.second));
        const TokenSeq doc = corpus_.window(rng, len);
        TransformedSample s = transform(doc, cfg, rng);
        if (paradigm_) s = apply_paradigm(std::move(s), cfg.cls, rng);
        s.config_index = config;
        if (s.input_ids.size() + s.target_ids.size() + 1 <= max_len_) return s;
      } catch (const Error&) {
        if (attempt >= 16) throw;
      }
      if (attempt >= 16) throw Error("pipeline: config " + cfg.name() + " cannot produce a sample within " + std::to_string(max_len_) + " tokens");
    }
  }

  TrainingSample sample(std::size_t config, Rng& rng) const { return layout_sample(transformed(config, rng)); }

  // One packed row of max_len positions; configs drawn from `action`.
  PackedBatch batch(std::span<const double> action, Rng& rng) const {
    if (action.size() != grid_.size()) throw Error("pipeline: action does not match the grid");
    const MixtureSampler mix(std::vector<double>(action.begin(), action.end()));
    std::vector<TrainingSample> samples;
    std::size_t used = 0;
    for (;;) {
      TrainingSample s = sample(mix.sample(rng), rng);
      if (used + s.size() > max_len_) break;
      used += s.size();
      samples.push_back(std::move(s));
    }
    if (samples.empty()) throw Error("pipeline: no sample fits a row");
    return pack(samples, max_len_).front();
  }

  // Fixed held-out rows for one config.
  std::vector<PackedBatch> eval_rows(std::size_t config, std::size_t n, std::uint64_t seed) const {
    Rng rng(Rng::mix(seed ^ Rng::mix(0xe7a1 + config)));
    std::vector<TrainingSample> samples;
    for (std::size_t i = 0; i < n; ++i) samples.push_back(sample(config, rng));
    return pack(samples, max_len_);
  }

 private:
  const Corpus& corpus_;
  std::vector<ObjectiveConfig> grid_;
  bool paradigm_;
  std::size_t max_len_;
};

// Mean token loss over every target in the rows.
template <class T>
double heldout_loss(const Model<T>& model, std::span<const PackedBatch> rows) {
  double sum = 0;
  std::size_t n = 0;
  for (const PackedBatch& b : rows) {
    for (const double l : model.token_losses(b.ids, b.targets, b.reset_mask)) {
      if (!std::isnan(l)) {
        sum += l;
        ++n;
      }
    }
  }
  if (n == 0) throw Error("held-out rows have no targets");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Resource estimate.

// Rough peak bytes for one training step: parameters with gradients and
// two moments, per-layer activation caches, and head logits over targets.
inline double estimate_train_bytes(const ModelConfig& m, std::size_t batch_tokens) {
  const double d = static_cast<double>(m.d_model), n = static_cast<double>(m.state_size);
  const double v = static_cast<double>(m.vocab_size), L = static_cast<double>(batch_tokens);
  double per_layer = m.kind == LayerKind::GatedSSM ? 5 * d * n + 2 * n : d * n * 3 + n * n * 2 + n * m.conv_width + 4 * n;
  if (m.mlp) per_layer += 3 * d * static_cast<double>(m.mlp_hidden());
  const double params = v * d * 2 + static_cast<double>(m.num_layers) * per_layer;
  const double acts = L * static_cast<double>(m.num_layers) * (4 * d + 12 * n + (m.mlp ? 4.0 * static_cast<double>(m.mlp_hidden()) : 0.0));
  return 4.0 * (4 * params + 2 * acts + 3 * L * v + 4 * L * d);
}

// ---------------------------------------------------------------------------
// Trainer.

struct TrainOptions {
  bool resume = false;
  std::size_t stop_after = 0;  // stop (with a checkpoint) after this step; 0 = run to the end
  std::ostream* log = nullptr;
};

struct TrainSummary {
  std::size_t steps = 0;
  double first_loss = 0, last_loss = 0;
  std::vector<double> final_eval_losses;
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg)
      : cfg_(std::move(cfg)), corpus_(make_corpus(cfg_.corpus, cfg_.seed)), grid_(cfg_.objective_grid()),
        model_(cfg_.model) {
    validate(cfg_);
    const double bytes = estimate_train_bytes(cfg_.model, cfg_.batch_tokens);
    const double limit = static_cast<double>(cfg_.memory_limit_mb) * 1024.0 * 1024.0;
    if (bytes > limit) {
      std::ostringstream os;
      os << "config needs an estimated " << static_cast<long long>(bytes / (1024.0 * 1024.0))
         << " MB per training step, above memory_limit_mb = " << cfg_.memory_limit_mb;
      throw Error(os.str());
    }
    const bool paradigm = cfg_.paradigm == ParadigmMode::Always ||
                          (cfg_.paradigm == ParadigmMode::UL2Only && cfg_.mixture == MixtureMode::UL2);
    pipeline_ = std::make_unique<DataPipeline>(*corpus_, grid_, paradigm, cfg_.batch_tokens);
    Rng init(cfg_.seed);
    model_.init(init);
    AdamWConfig oc = cfg_.optim;
    oc.total_steps = cfg_.steps;
    optim_ = AdamW<float>(model_.params(), oc);
    if (cfg_.mixture == MixtureMode::Birdie) {
      controller_ = std::make_unique<Controller>(ClassMap::from_configs(grid_), cfg_.controller, Rng::mix(cfg_.seed ^ 0xb1d));
    }
    action_ = base_action();
  }

  const RunConfig& config() const { return cfg_; }
  Model<float>& model() { return model_; }
  const std::vector<ObjectiveConfig>& grid() const { return grid_; }
  const Corpus& corpus() const { return *corpus_; }
  Controller* controller() { return controller_.get(); }
  std::size_t step() const { return step_; }
  const Action& action() const { return action_; }

  std::string dir() const { return cfg_.out_dir; }
  std::string path(const std::string& f) const { return (std::filesystem::path(cfg_.out_dir) / f).string(); }

  TrainSummary run(const TrainOptions& opt = {}) {
    std::filesystem::create_directories(cfg_.out_dir);
    if (opt.resume && std::filesystem::exists(path("checkpoint.bin"))) {
      load(path("checkpoint.bin"));
      truncate_metrics();
      if (opt.log) *opt.log << "resumed at step " << step_ << "\n";
    } else {
      std::ofstream(path("metrics.jsonl"), std::ios::trunc);
      if (controller_) std::ofstream(path("curriculum.jsonl"), std::ios::trunc);
    }
    write_manifest();
    std::ofstream metrics(path("metrics.jsonl"), std::ios::app);
    std::ofstream trace;
    if (controller_) trace.open(path("curriculum.jsonl"), std::ios::app);

    TrainSummary sum;
    const std::size_t end = opt.stop_after ? std::min(opt.stop_after, cfg_.steps) : cfg_.steps;
    while (step_ < end) {
      const std::size_t s = ++step_;
      Rng rng(Rng::mix(cfg_.seed ^ Rng::mix(s)));
      const PackedBatch b = pipeline_->batch(action_, rng);
      model_.zero_grad();
      const double loss = model_.loss_and_grad(b);
      const double lr = optim_.step();
      if (sum.steps++ == 0) sum.first_loss = loss;
      sum.last_loss = loss;

      nlohmann::json row{{"step", s}, {"loss", loss}, {"lr", lr}};
      const bool eval = is_eval_step(s) || s == cfg_.steps;
      if (eval) {
        const std::vector<double> losses = eval_losses();
        row["eval_losses"] = losses;
        sum.final_eval_losses = losses;
        if (controller_ && is_eval_step(s)) {
          const TraceRow& t = controller_->observe(s, losses);
          trace << t.to_json().dump() << "\n";
          trace.flush();
          action_ = controller_->action();
        }
        row["action"] = action_;
      }
      if (eval || s % std::max<std::size_t>(1, cfg_.log_every) == 0) {
        metrics << row.dump() << "\n";
        metrics.flush();
      }
      if (opt.log && (eval || s % 100 == 0)) {
        *opt.log << "step " << s << " loss " << std::fixed << std::setprecision(4) << loss << " lr " << std::setprecision(6) << lr << "\n";
      }
      if ((cfg_.checkpoint_every && s % cfg_.checkpoint_every == 0) || s == end) save(path("checkpoint.bin"));
    }
    return sum;
  }

  // Per-config losses on fixed held-out rows (built once).
  std::vector<double> eval_losses() {
    if (eval_rows_.empty()) {
      for (std::size_t c = 0; c < grid_.size(); ++c) {
        eval_rows_.push_back(pipeline_->eval_rows(c, cfg_.eval_sequences, cfg_.seed ^ 0x5eedULL));
      }
    }
    std::vector<double> out;
    for (const auto& rows : eval_rows_) out.push_back(heldout_loss(model_, rows));
    return out;
  }

  void save(const std::string& file) {
    Checkpoint ck;
    ck.meta = meta();
    ck.meta["step"] = std::to_string(step_);
    ck.meta["optimizer_step"] = std::to_string(optim_.step_count());
    nlohmann::json a = action_;
    ck.meta["action"] = a.dump();
    const auto ps = model_.params();
    store_params(ck, ps);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      ck.tensors["adam.m." + ps[k]->name] = to_tensor(optim_.first_moments()[k]);
      ck.tensors["adam.v." + ps[k]->name] = to_tensor(optim_.second_moments()[k]);
    }
    if (controller_) {
      ck.meta["controller"] = controller_->state().dump();
      write_doubles(file + ".reward", controller_->reward_model().state_tensors());
    }
    save_checkpoint(file, ck);
  }

  void load(const std::string& file) {
    const Checkpoint ck = load_checkpoint(file);
    check_compatible(ck, meta());
    const auto ps = model_.params();
    restore_params(ck, ps);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      from_tensor(ck.tensors.at("adam.m." + ps[k]->name), optim_.first_moments()[k], ps[k]->name);
      from_tensor(ck.tensors.at("adam.v." + ps[k]->name), optim_.second_moments()[k], ps[k]->name);
    }
    step_ = std::stoull(ck.get("step"));
    optim_.set_step_count(std::stoull(ck.get("optimizer_step")));
    action_ = nlohmann::json::parse(ck.get("action")).get<Action>();
    if (controller_) {
      controller_->load_state(nlohmann::json::parse(ck.get("controller")));
      read_doubles(file + ".reward", controller_->reward_model().state_tensors());
    }
  }

  // Metadata that must match between a checkpoint and the run loading it.
  std::map<std::string, std::string> meta() const {
    return {{"format", "birdie"},
            {"model", cfg_.model.describe()},
            {"mixture", mixture_name(cfg_.mixture)},
            {"grid_size", std::to_string(grid_.size())},
            {"config_hash", hex(fnv1a(cfg_.canonical()))}};
  }

  static std::string hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  static void write_doubles(const std::string& file, const std::vector<nn::Mat<double>*>& ts) {
    const std::string tmp = file + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write '" + tmp + "'");
      for (const auto* m : ts) {
        for (Eigen::Index i = 0; i < m->size(); ++i) detail::write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m->data()[i]));
      }
    }
    std::filesystem::rename(tmp, file);
  }

  static void read_doubles(const std::string& file, const std::vector<nn::Mat<double>*>& ts) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot open '" + file + "'");
    for (auto* m : ts) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = std::bit_cast<double>(detail::read_le<std::uint64_t>(in));
    }
    if (!in) throw Error("'" + file + "' is truncated");
  }

 private:
  Action base_action() const {
    if (cfg_.mixture == MixtureMode::Fixed && !cfg_.fixed_weights.empty()) {
      return Action(MixtureSampler(cfg_.fixed_weights).probabilities().begin(),
                    MixtureSampler(cfg_.fixed_weights).probabilities().end());
    }
    return uniform_action(grid_.size());
  }

  static void check_compatible(const Checkpoint& ck, const std::map<std::string, std::string>& want) {
    for (const auto& key : {"format", "model", "mixture", "grid_size"}) {
      if (ck.get(key) != want.at(key)) {
        throw Error(std::string("checkpoint does not match this config: ") + key + " is '" + ck.get(key) +
                    "', config has '" + want.at(key) + "'");
      }
    }
  }

  // Drops metric rows past the resumed step.
  void truncate_metrics() {
    std::vector<std::string> keep;
    {
      std::ifstream in(path("metrics.jsonl"));
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        if (nlohmann::json::parse(line).at("step").get<std::size_t>() <= step_) keep.push_back(line);
      }
    }
    std::ofstream out(path("metrics.jsonl"), std::ios::trunc);
    for (const auto& l : keep) out << l << "\n";
    if (controller_) {
      std::ofstream tr(path("curriculum.jsonl"), std::ios::trunc);
      for (const auto& r : controller_->trace()) tr << r.to_json().dump() << "\n";
    }
  }

  void write_manifest() const {
    nlohmann::json m;
    m["config_hash"] = hex(fnv1a(cfg_.canonical()));
    m["seed"] = cfg_.seed;
    m["threads"] = cfg_.threads;
    m["mixture"] = mixture_name(cfg_.mixture);
    m["config"] = cfg_.canonical();
    m["versions"] = {{"birdie", kVersion},
                     {"checkpoint_format", kCheckpointVersion},
                     {"compiler", __VERSION__},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)}};
    m["objectives"] = nlohmann::json::array();
    for (const auto& c : grid_) m["objectives"].push_back(c.name());
    m["parameters"] = const_cast<Model<float>&>(model_).num_parameters();
    std::ofstream out(path("manifest.json"), std::ios::trunc);
    out << m.dump(2) << "\n";
  }

  RunConfig cfg_;
  std::unique_ptr<Corpus> corpus_;
  std::vector<ObjectiveConfig> grid_;
  Model<float> model_;
  AdamW<float> optim_;
  std::unique_ptr<DataPipeline> pipeline_;
  std::unique_ptr<Controller> controller_;
  Action action_;
  std::size_t step_ = 0;
  std::vector<std::vector<PackedBatch>> eval_rows_;
};

// Rebuilds a model from a checkpoint written by Trainer; the checkpoint
// must match the config's model.
inline void load_model(Model<float>& model, const std::string& file) {
  const Checkpoint ck = load_checkpoint(file);
  if (ck.get("model") != model.config().describe()) {
    throw Error("checkpoint/config mismatch: checkpoint model is '" + ck.get("model") + "', config model is '" +
                model.config().describe() + "'");
  }
  restore_params(ck, model.params());
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning on (prompt, answer) pairs.

struct FinetuneConfig {
  std::size_t steps = 500;
  std::size_t batch_tokens = 2048;
  AdamWConfig optim{1e-3, 1e-4, 0.9, 0.95, 1e-8, 0.1, 1.0, 0, 0};
  PromptMode mode = PromptMode::Prefix;
  std::uint64_t seed = 0;
};

using SampleSource = std::function<TransformedSample(Rng&)>;

// Returns the per-step training loss.
template <class T>
std::vector<double> finetune(Model<T>& model, const FinetuneConfig& cfg, const SampleSource& source) {
  AdamWConfig oc = cfg.optim;
  oc.total_steps = cfg.steps;
  AdamW<T> opt(model.params(), oc);
  std::vector<double> losses;
  for (std::size_t s = 1; s <= cfg.steps; ++s) {
    Rng rng(Rng::mix(cfg.seed ^ Rng::mix(s ^ 0xf17eULL)));
    std::vector<TrainingSample> samples;
    std::size_t used = 0;
    for (;;) {
      const TransformedSample t = source(rng);
      TrainingSample ts = supervised_sample(t.input_ids, t.target_ids, cfg.mode);
      if (ts.size() > cfg.batch_tokens) throw Error("finetune: sample longer than batch_tokens");
      if (used + ts.size() > cfg.batch_tokens) break;
      used += ts.size();
      samples.push_back(std::move(ts));
    }
    const PackedBatch b = pack(samples, cfg.batch_tokens).front();
    model.zero_grad();
    losses.push_back(static_cast<double>(model.loss_and_grad(b)));
    opt.step();
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Evaluation helpers.

template <class T>
Decoder make_decoder(const Model<T>& model, PromptMode mode) {
  return [&model, mode](std::span<const TokenId> prompt, std::size_t max_new) {
    return model.greedy_decode(prompt, max_new, vocab::kDone, mode);
  };
}

// Copy task: the target is the input followed by DONE.
inline SampleSource copy_source(const Corpus& corpus, std::size_t min_len, std::size_t max_len) {
  return [&corpus, min_len, max_len](Rng& rng) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_len), static_cast<std::int64_t>(max_len)));
    return apply::copy(corpus.window(rng, n));
  };
}

// Phonebook task with an entry count drawn from [min_entries, max_entries].
inline SampleSource phonebook_source(std::size_t min_entries, std::size_t max_entries, std::size_t num_queries) {
  return [=](Rng& rng) {
    PhonebookSpec spec;
    spec.num_entries = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_entries), static_cast<std::int64_t>(max_entries)));
    spec.num_queries = std::min(num_queries, spec.num_entries);
    spec.seed = rng.next_u64();
    return phonebook_sample(gen_phonebook(spec));
  };
}

// Pooled greedy token accuracy over n samples from source.
inline double greedy_accuracy(const Decoder& decode, const SampleSource& source, std::size_t n, std::uint64_t seed) {
  Rng rng(Rng::mix(seed ^ 0xacc));
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const TransformedSample s = source(rng);
    const TokenSeq got = decode(s.input_ids, s.target_ids.size());
    hit += static_cast<std::size_t>(std::llround(token_accuracy(got, s.target_ids) * static_cast<double>(s.target_ids.size())));
    total += s.target_ids.size();
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

struct PhonebookRow {
  std::size_t num_queries = 0;
  double accuracy = 0;
  double all_correct_rate = 0;
  double unordered_accuracy = 0;
  double token_accuracy = 0;
};

// Greedy phonebook evaluation: n books per query count.
inline std::vector<PhonebookRow> eval_phonebook(const Decoder& decode, std::span<const std::size_t> query_counts,
                                                std::size_t min_entries, std::size_t max_entries, std::size_t n,
                                                std::uint64_t seed) {
  std::vector<PhonebookRow> rows;
  for (const std::size_t q : query_counts) {
    Rng rng(Rng::mix(seed ^ Rng::mix(q)));
    PhonebookRow row;
    row.num_queries = q;
    std::size_t tok_hit = 0, tok_total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      PhonebookSpec spec;
      spec.num_queries = q;
      spec.num_entries = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(std::max(min_entries, q)),
                                                                  static_cast<std::int64_t>(std::max(max_entries, q))));
      spec.seed = rng.next_u64();
      const Phonebook pb = gen_phonebook(spec);
      const TransformedSample s = phonebook_sample(pb);
      const TokenSeq got = decode(s.input_ids, s.target_ids.size() + 8);
      const PhonebookScore sc = score_phonebook(decode_text(got), pb.answers);
      row.accuracy += sc.accuracy;
      row.all_correct_rate += sc.all_correct ? 1.0 : 0.0;
      row.unordered_accuracy += sc.unordered_accuracy;
      tok_hit += static_cast<std::size_t>(std::llround(token_accuracy(got, s.target_ids) * static_cast<double>(s.target_ids.size())));
      tok_total += s.target_ids.size();
    }
    const double dn = static_cast<double>(std::max<std::size_t>(1, n));
    row.accuracy /= dn;
    row.all_correct_rate /= dn;
    row.unordered_accuracy /= dn;
    row.token_accuracy = tok_total ? static_cast<double>(tok_hit) / static_cast<double>(tok_total) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

// Mean per-token loss of a choice given a context, in the prefix layout.
template <class T>
ChoiceScorer model_choice_scorer(const Model<T>& model, PromptMode mode = PromptMode::Prefix) {
  return [&model, mode](const TokenSeq& context, const TokenSeq& choice) {
    const TrainingSample s = supervised_sample(context, choice, mode);
    return static_cast<double>(model.loss(s.ids, s.targets, s.reset_mask));
  };
}

}  // namespace birdie
