#include <doctest.h>

#include <cstdlib>
#include <map>

#include "support.hpp"
#include "vstain/cli.hpp"
#include "vstain/errors.hpp"

using namespace vstain;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> fingerprints(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = file_fingerprint(e.path());
  }
  return out;
}

// Runs `f` into a fresh `dir` twice and returns both fingerprint sets.
template <typename F>
std::pair<std::map<std::string, std::string>, std::map<std::string, std::string>> twice(const fs::path& dir, F f) {
  fs::remove_all(dir);
  f();
  auto a = fingerprints(dir);
  fs::remove_all(dir);
  f();
  return {a, fingerprints(dir)};
}

cli::RunConfig small(const fs::path& root) {
  cli::RunConfig c;
  c.seed = 7;
  c.phantom.count = 4;
  c.phantom.ratio = {1, 0, 0};
  c.phantom.stack_depth = 3;
  c.split.k = 1;
  c.split.test_counts = {1, 0, 0};
  c.split.val_fraction = 0.34;
  c.train.epochs = 1;
  c.train.batch_size = 2;
  c.train.augment.patch_size = 32;
  c.train.augment.patches_per_pair = 2;
  c.train.generator.width = 4;
  c.train.generator.residual_blocks = 1;
  c.train.discriminator.width = 4;
  c.train.discriminator.layers = 2;
  c.infer.tile = 32;
  c.infer.step = 16;
  c.eval.patch = 32;
  c.eval.frc_patch = 32;
  c.out = (root / "phantom").string();
  return c;
}

int shell(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(VSTAIN_CLI) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config round-trips and rejects unknown keys") {
    auto c = small("/tmp");
    c.train.variant = train::Variant::pix2pix;
    c.invert_ct = true;
    const auto j = cli::to_json(c);
    const auto back = cli::from_json(j);
    CHECK(cli::to_json(back) == j);
    CHECK(back.phantom.count == 4);
    CHECK(back.train.variant == train::Variant::pix2pix);

    auto bad = j;
    bad["train"]["learning_rate"] = 1.0;
    CHECK_THROWS_AS(cli::from_json(bad), ConfigError);
    bad = j;
    bad["seed"] = "seven";
    CHECK_THROWS_AS(cli::from_json(bad), ConfigError);
    CHECK(cli::to_json(cli::from_json(nlohmann::json::object())) == cli::to_json(cli::RunConfig{}));
    for (const char* name : {"desk.json", "full.json"}) {
      CAPTURE(name);
      CHECK_NOTHROW(cli::load_config(fs::path(VSTAIN_FIXTURES) / ".." / ".." / "configs" / name));
    }
  }

  TEST_CASE("phantom, preprocess and infer are hash-identical on rerun") {
    const auto root = testing::scratch("cli_pipeline");
    auto c = small(root);
    c.phantom.count = 10;
    c.phantom.ratio = {7, 1, 2};
    const auto [p1, p2] = twice(root / "phantom", [&] { cli::cmd_phantom(c); });
    CHECK(p1 == p2);
    int pairs = 0;
    for (const auto& [name, _] : p1) pairs += name.ends_with("_ct.png") && name.starts_with("pair_");
    CHECK(pairs == 10);
    CHECK(p1.count("manifest.json"));
    CHECK(p1.count("config.json"));

    auto pre = c;
    pre.manifest = (root / "phantom" / "manifest.json").string();
    pre.out = (root / "pre").string();
    const auto [q1, q2] = twice(root / "pre", [&] { cli::cmd_preprocess(pre); });
    CHECK(q1 == q2);

    // Normalised CT is a fixed point; histology is not, its clamped stretch
    // widens the range again on every pass.
    auto again = pre;
    again.manifest = (root / "pre" / "manifest.json").string();
    again.out = (root / "pre2").string();
    cli::cmd_preprocess(again);
    for (const auto& [name, hash] : q1) {
      if (name.ends_with("_ct.png")) CHECK_MESSAGE(fingerprints(root / "pre2").at(name) == hash, name);
    }
  }

  TEST_CASE("train, infer and eval run end to end") {
    const auto root = testing::scratch("cli_train");
    auto c = small(root);
    cli::cmd_phantom(c);
    c.manifest = (root / "phantom" / "manifest.json").string();
    c.out = (root / "train").string();
    cli::cmd_train(c);
    const auto echo = nlohmann::json::parse(std::ifstream(root / "train" / "config.json"));
    CHECK(echo["train"]["weights"]["px"] == 6.0);
    const auto final = nlohmann::json::parse(std::ifstream(root / "train" / "final.json"));
    const std::string ckpt = final["folds"][0]["checkpoint"];
    CHECK(fs::exists(root / "train" / "folds.json"));

    auto inf = c;
    inf.checkpoint = ckpt;
    inf.out = (root / "infer").string();
    const auto [i1, i2] = twice(root / "infer", [&] { cli::cmd_infer(inf); });
    CHECK(i1 == i2);
    CHECK(i1.size() == 2 * 4 + 1);  // raw and masked per pair, plus the config

    inf.volume = true;
    inf.input = (root / "phantom" / "stack").string();
    inf.out = (root / "volume").string();
    const auto [v1, v2] = twice(root / "volume", [&] { cli::cmd_infer(inf); });
    CHECK(v1 == v2);
    CHECK(v1.count("volume/slice_0002.png"));

    auto ev = c;
    ev.checkpoint = ckpt;
    ev.folds = (root / "train" / "folds.json").string();
    ev.out = (root / "eval").string();
    cli::cmd_eval(ev);
    for (const char* f : {"long.csv", "test_summary.csv", "baseline_test_summary.csv", "frc_pairs.csv"}) {
      CHECK_MESSAGE(fs::exists(root / "eval" / f), f);
    }
  }

  TEST_CASE("standard variant drops the paired terms") {
    const auto root = testing::scratch("cli_variant");
    auto c = small(root);
    cli::cmd_phantom(c);
    auto j = cli::to_json(c);
    j["paths"]["manifest"] = (root / "phantom" / "manifest.json").string();
    std::ofstream(root / "run.json") << j.dump();
    const auto out = root / "std";
    REQUIRE(shell("train --config " + (root / "run.json").string() + " --variant standard_cyclegan --out " +
                      out.string(),
                  root / "err.txt") == 0);
    const auto echo = nlohmann::json::parse(std::ifstream(out / "config.json"));
    CHECK(echo["train"]["variant"] == "standard_cyclegan");
    CHECK(echo["train"]["weights"]["px"] == 0.0);
    CHECK(echo["train"]["weights"]["gs"] == 0.0);
    CHECK(echo["train"]["weights"]["cyc"] == 6.0);
  }

  TEST_CASE("failures exit nonzero with one categorised line") {
    const auto root = testing::scratch("cli_errors");
    const auto err = root / "err.txt";
    CHECK(shell("", err) == 2);
    CHECK(slurp(err).starts_with("error[config]"));
    CHECK(shell("phantom --no-such-flag", err) == 2);
    CHECK(shell("preprocess --manifest " + (root / "missing.json").string() + " --out " + root.string(), err) == 1);
    CHECK(slurp(err).starts_with("error[io]"));
    std::ofstream(root / "bad.json") << R"({"train": {"epochs": -1}})";
    CHECK(shell("phantom --config " + (root / "bad.json").string(), err) == 1);
    CHECK(slurp(err).starts_with("error[config]"));
    CHECK(shell("train --variant cyclegan3000", err) == 1);
    CHECK(slurp(err).starts_with("error[config]"));
    const std::string text = slurp(err);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    CHECK(shell("phantom --out " + (root / "ok").string() + " --seed 2", err) == 0);
  }
}
