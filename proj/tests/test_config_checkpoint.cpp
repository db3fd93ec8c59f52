#include "stosa/checkpoint.hpp"
#include "stosa/config.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <sstream>

using namespace stosa;

TEST_CASE("run config text round-trips") {
  RunConfig c;
  c.manifest = "data/office.split";
  c.variant = Variant::DotBaseline;
  c.d = 128;
  c.heads = 4;
  c.dropout = 0.7;
  c.lambda = 0.01;
  c.lr = 1e-4;
  c.seed = 123456789012345ULL;
  c.eval_ns = {1, 5, 10};
  c.normalization = Normalization::DistanceRatio;
  c.rank_mode = RankMode::RankAll;
  c.attention_dropout = false;
  CHECK(RunConfig::parse(c.to_text()) == c);
  CHECK(RunConfig::parse(RunConfig{}.to_text()) == RunConfig{});
  for (const auto& key : RunConfig::keys()) CHECK(c.get(key) == RunConfig::parse(c.to_text()).get(key));
}

TEST_CASE("run config parsing") {
  auto c = RunConfig::parse("# comment\n\nd = 32\n  max_len=100  \nvariant = dot\neval_ns = 1,10\n");
  CHECK(c.d == 32);
  CHECK(c.max_len == 100);
  CHECK(c.variant == Variant::DotBaseline);
  CHECK(c.eval_ns == std::vector<int>{1, 10});
  CHECK_THROWS_AS(RunConfig::parse("dimension = 32\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("d 32\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("d = many\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("variant = kl\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("normalization = ratio\n"), ConfigError);
}

TEST_CASE("run config validation enforces search ranges unless deviation is allowed") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.d = 48;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.allow_deviation = true;
  CHECK_NOTHROW(c.validate());
  c.d = 33;
  CHECK_THROWS_AS(c.validate(), ConfigError);  // odd width is never valid
  c = RunConfig{};
  c.dropout = 0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.eval_ns = {};
  CHECK_THROWS_AS(c.validate(), ConfigError);

  auto mc = RunConfig{}.model_config(17);
  CHECK(mc.num_items == 17);
  CHECK(mc.d == 64);
  CHECK(mc.max_len == 50);
  auto tc = RunConfig{}.train_config();
  CHECK(tc.lambda == 0.1);
  CHECK(tc.adam.lr == 1e-3);
  CHECK(tc.patience == 50);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  for (auto variant : {Variant::Stosa, Variant::DotBaseline}) {
    auto model = test::tiny_model(variant, 11, 8, 5, 2, 2, 3);
    Checkpoint<double> ckpt{model, RunConfig{}, {{"epoch", 7}, {"note", "x y"}}};
    ckpt.config.variant = variant;
    std::stringstream buf;
    save_checkpoint(buf, ckpt);
    auto back = load_checkpoint<double>(buf);
    CHECK(back.config == ckpt.config);
    CHECK(back.provenance == ckpt.provenance);
    CHECK(back.model.config.variant == variant);
    CHECK(back.model.parameter_count() == Model<double>::expected_parameter_count(back.model.config));
    std::vector<Mat<double>> a, b;
    model.visit([&](const std::string&, Mat<double>& m) { a.push_back(m); });
    back.model.visit([&](const std::string&, Mat<double>& m) { b.push_back(m); });
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(std::memcmp(a[i].data(), b[i].data(), sizeof(double) * static_cast<std::size_t>(a[i].size())) == 0);

    // the same bytes come back out
    std::stringstream again;
    save_checkpoint(again, back);
    CHECK(again.str() == buf.str());
  }
}

TEST_CASE("f32 checkpoints load at either precision") {
  ModelConfig c;
  c.num_items = 4;
  c.d = 8;
  c.max_len = 3;
  Rng rng(5);
  Checkpoint<float> ckpt{init_model<float>(c, rng), RunConfig{}, {}};
  std::stringstream buf;
  save_checkpoint(buf, ckpt);
  auto as_double = load_checkpoint<double>(buf);
  CHECK(as_double.model.stosa().tables.item_mean.cast<float>() == ckpt.model.stosa().tables.item_mean);
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto model = test::tiny_model(Variant::Stosa, 5, 8, 3, 1, 1, 6);
  std::stringstream buf;
  save_checkpoint(buf, Checkpoint<double>{model, RunConfig{}, {}});
  const std::string good = buf.str();

  std::stringstream bad_magic("NOT-A-CHECKPOINT\n");
  CHECK_THROWS_AS(load_checkpoint<double>(bad_magic), CheckpointError);
  std::stringstream truncated(good.substr(0, good.size() / 2));
  CHECK_THROWS_AS(load_checkpoint<double>(truncated), CheckpointError);
  std::string renamed = good;
  renamed.replace(renamed.find("tensor tables.item_mean"), 23, "tensor tables.item_mXan");
  std::stringstream wrong_name(renamed);
  CHECK_THROWS_AS(load_checkpoint<double>(wrong_name), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint<double>(std::string("/nonexistent/dir/model.ckpt")), CheckpointError);
}
