#include <gtest/gtest.h>

#include <filesystem>

#include "birdie/optim.hpp"
#include "birdie/tasks.hpp"
#include "birdie/train.hpp"

using namespace birdie;

namespace {

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

InfillingItem sample_item() {
  InfillingItem it;
  it.entries = {"Mia packed a bag.", "(blank)", "She reached the summit at noon."};
  it.choices = {{"A", "She climbed the trail."}, {"B", "He sold the car."}, {"C", "They baked bread."}, {"D", "It rained fish."}};
  it.label = "A";
  return it;
}

}  // namespace

TEST(Phonebook, SingleEntry) {
  PhonebookSpec spec;
  spec.num_entries = 1;
  spec.num_queries = 1;
  const Phonebook pb = gen_phonebook(spec);
  ASSERT_EQ(pb.entries.size(), 1u);
  ASSERT_EQ(pb.answers.size(), 1u);
  EXPECT_EQ(pb.answers[0], pb.entries[0].number);
  EXPECT_EQ(count_occurrences(pb.prompt, pb.entries[0].name + ": "), 1u);
  EXPECT_EQ(extract_numbers(pb.prompt), pb.answers);
}

TEST(Phonebook, DeterministicPerSeed) {
  PhonebookSpec spec;
  spec.num_entries = 50;
  spec.num_queries = 4;
  spec.seed = 77;
  EXPECT_EQ(gen_phonebook(spec).prompt, gen_phonebook(spec).prompt);
  spec.seed = 78;
  const auto other = gen_phonebook(spec).prompt;
  spec.seed = 77;
  EXPECT_NE(gen_phonebook(spec).prompt, other);
}

TEST(Phonebook, AnswersOccurOnceNextToTheirNames) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    PhonebookSpec spec;
    spec.seed = seed;
    spec.num_entries = 10 + seed % 40;
    spec.num_queries = 1 + seed % 8;
    const Phonebook pb = gen_phonebook(spec);
    for (std::size_t k = 0; k < pb.answers.size(); ++k) {
      const std::string& name = pb.entries[pb.queries[k]].name;
      ASSERT_EQ(count_occurrences(pb.prompt, pb.answers[k]), 1u) << seed;
      ASSERT_EQ(count_occurrences(pb.prompt, name + ": " + pb.answers[k] + "\n"), 1u) << seed;
    }
    ASSERT_EQ(pb.prompt.rfind("What are the phone numbers for ", 0), 0u);
  }
}

TEST(Phonebook, InvalidSpecs) {
  PhonebookSpec s;
  s.num_entries = 2;
  s.num_queries = 3;
  EXPECT_THROW(gen_phonebook(s), Error);
  s.num_queries = 0;
  EXPECT_THROW(gen_phonebook(s), Error);
}

TEST(PhonebookScore, ExactAnswerIsAllCorrect) {
  const std::vector<std::string> ans = {"123-456-7890", "555-000-1111"};
  const auto s = score_phonebook("123-456-7890, 555-000-1111", ans);
  EXPECT_TRUE(s.all_correct);
  EXPECT_DOUBLE_EQ(s.accuracy, 1.0);
}

TEST(PhonebookScore, OneDigitOffMarksThatQueryWrong) {
  const std::vector<std::string> ans = {"123-456-7890", "555-000-1111"};
  const auto s = score_phonebook("123-456-7890, 555-000-1112", ans);
  EXPECT_EQ(s.ordered, (std::vector<bool>{true, false}));
  EXPECT_DOUBLE_EQ(s.accuracy, 0.5);
  EXPECT_FALSE(s.all_correct);
}

TEST(PhonebookScore, OrderSensitiveAndInsensitiveVariants) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> ans;
    for (int k = 0; k < 4; ++k) ans.push_back(make_phone_number(rng));
    std::vector<std::string> out = ans;
    rng.shuffle(std::span<std::string>(out));
    std::string text;
    for (const auto& o : out) text += o + ", ";
    const auto s = score_phonebook(text, ans);
    // brute force: position matches and set membership
    std::size_t pos = 0;
    for (std::size_t i = 0; i < ans.size(); ++i) pos += out[i] == ans[i];
    EXPECT_DOUBLE_EQ(s.accuracy, static_cast<double>(pos) / 4.0);
    EXPECT_TRUE(s.unordered_all_correct);
  }
}

TEST(PhonebookScore, ExtractIgnoresLongerDigitRuns) {
  EXPECT_TRUE(extract_numbers("1123-456-7890").empty());
  EXPECT_EQ(extract_numbers("a 123-456-7890b").size(), 1u);
}

TEST(SelectiveCopyEval, PerfectStubScoresOne) {
  const auto configs = desk_grid();
  const auto source = [](std::size_t, Rng& rng) {
    TokenSeq d(200);
    for (auto& t : d) t = vocab::byte(static_cast<std::uint8_t>('a' + rng.index(26)));
    return d;
  };
  // replay the evaluator's draws to build an answer key
  std::map<TokenSeq, TokenSeq> answers;
  std::vector<ObjectiveConfig> sc;
  for (const auto& c : configs)
    if (c.cls == ObjectiveClass::SelectiveCopying) sc.push_back(c);
  ASSERT_FALSE(sc.empty());
  for (std::size_t c = 0; c < sc.size(); ++c) {
    Rng rng(Rng::mix(5 + 0x9e37 * (c + 1)));
    for (std::size_t k = 0; k < 10; ++k) {
      const TokenSeq doc = source(k, rng);
      const TransformedSample s = transform(doc, sc[c], rng);
      answers[s.input_ids] = s.target_ids;
    }
  }
  const Decoder perfect = [&](std::span<const TokenId> p, std::size_t) { return answers.at(TokenSeq(p.begin(), p.end())); };
  for (const double a : eval_selective_copy(perfect, sc, source, 10, 5)) EXPECT_DOUBLE_EQ(a, 1.0);
}

TEST(SelectiveCopyEval, RandomStubScoresAboutOneOverV) {
  const auto configs = std::vector<ObjectiveConfig>{make_selective_copying({64, 128}, 2, ContextPlacement::After)};
  const auto source = [](std::size_t, Rng& rng) {
    TokenSeq d(128);
    for (auto& t : d) t = vocab::byte(static_cast<std::uint8_t>(rng.index(256)));
    return d;
  };
  Rng noise(9);
  const Decoder random = [&](std::span<const TokenId>, std::size_t n) {
    TokenSeq out(n);
    for (auto& t : out) t = static_cast<TokenId>(noise.index(vocab::kSize));
    return out;
  };
  const double acc = eval_selective_copy(random, configs, source, 2000, 1).at(0);
  EXPECT_NEAR(acc, 1.0 / vocab::kSize, 0.003);
}

TEST(SelectiveCopyEval, DeterministicGivenSeed) {
  const auto configs = std::vector<ObjectiveConfig>{make_selective_copying({64, 128}, 1, ContextPlacement::Before)};
  const auto source = [](std::size_t, Rng& rng) {
    TokenSeq d(100);
    for (auto& t : d) t = vocab::byte(static_cast<std::uint8_t>(rng.index(256)));
    return d;
  };
  // deterministic "model": echoes the first prompt tokens
  const Decoder echo = [](std::span<const TokenId> p, std::size_t n) { return TokenSeq(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(std::min(n, p.size()))); };
  EXPECT_EQ(eval_selective_copy(echo, configs, source, 50, 3), eval_selective_copy(echo, configs, source, 50, 3));
}

TEST(TokenAccuracy, MissingPositionsCountAsWrong) {
  const TokenSeq t = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(token_accuracy(TokenSeq{1, 2}, t), 0.5);
  EXPECT_DOUBLE_EQ(token_accuracy(TokenSeq{1, 2, 3, 4, 5}, t), 1.0);
  EXPECT_DOUBLE_EQ(token_accuracy(TokenSeq{}, t), 0.0);
}

TEST(Infilling, TiesGoToTheFirstLabel) {
  const ChoiceScorer flat = [](const TokenSeq&, const TokenSeq&) { return 1.25; };
  InfillingItem it = sample_item();
  for (auto& [k, v] : it.choices) v = "same";
  const auto r = score_infilling(flat, it);
  EXPECT_EQ(r.chosen, "A");
  EXPECT_EQ(r.losses.size(), 4u);
}

TEST(Infilling, OverfitModelPicksItsChoice) {
  Model<float> m(ModelConfig::gated_ssm(2, 32, 32));
  Rng rng(4);
  m.init(rng);
  AdamWConfig oc;
  oc.lr = oc.min_lr = 1e-2;
  oc.weight_decay = 0;
  AdamW<float> opt(m.params(), oc);
  InfillingItem it = sample_item();
  it.label = "C";
  const TrainingSample s = supervised_sample(encode(it.context()), encode(it.choices.at("C")), PromptMode::Prefix);
  for (int step = 0; step < 60; ++step) {
    m.zero_grad();
    m.loss_and_grad(s.ids, s.targets, s.reset_mask);
    opt.step();
  }
  const auto r = score_infilling(model_choice_scorer(m), it);
  EXPECT_EQ(r.chosen, "C");
  for (const auto& [k, l] : r.losses)
    if (k != "C") {
      EXPECT_GT(l, r.losses.at("C"));
    }
}

TEST(Infilling, JsonRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "birdie_infill.json").string();
  std::vector<InfillingItem> items = {sample_item(), sample_item()};
  items[1].label = "D";
  items[1].entries[0] = "Unicode \xc3\xa9 and \"quotes\"";
  save_infilling(path, items);
  const auto back = load_infilling(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].entries, items[i].entries);
    EXPECT_EQ(back[i].choices, items[i].choices);
    EXPECT_EQ(back[i].label, items[i].label);
  }
  std::filesystem::remove(path);
}

TEST(Infilling, InvalidItemsRejected) {
  InfillingItem it = sample_item();
  it.entries[1] = "no blank";
  EXPECT_THROW(it.validate(), Error);
  it = sample_item();
  it.label = "E";
  EXPECT_THROW(it.validate(), Error);
}

TEST(AnswerMatching, F1AndContains) {
  EXPECT_DOUBLE_EQ(token_f1("a b c", "b c d"), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(token_f1("the answer", "the answer"), 1.0);
  EXPECT_DOUBLE_EQ(token_f1("x y", "p q"), 0.0);
  EXPECT_DOUBLE_EQ(token_f1("b c d", "a b c"), token_f1("a b c", "b c d"));
  EXPECT_TRUE(contains_label("It was  the RED barn.", {"red barn"}));
  EXPECT_FALSE(contains_label("It was the barn.", {"red barn", "blue"}));
  const std::vector<std::string> labels = {"nothing", "b c d"};
  EXPECT_DOUBLE_EQ(token_f1("a b c", labels), 2.0 / 3.0);
}

TEST(AnswerMatching, F1IsBounded) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    std::string a, b;
    for (int k = 0; k < 6; ++k) {
      a += std::string(1, static_cast<char>('a' + rng.index(4))) + " ";
      b += std::string(1, static_cast<char>('a' + rng.index(4))) + " ";
    }
    const double f = token_f1(a, b);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    EXPECT_DOUBLE_EQ(f, token_f1(b, a));
  }
}
