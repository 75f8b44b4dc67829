#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "feedlab_cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
namespace io = feedlab::io;

namespace {

std::string samples(const std::string& name) {
  const char* env = std::getenv("FEEDLAB_SAMPLES");
  return (fs::path(env && *env ? env : FEEDLAB_SAMPLES_DIR) / name).string();
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "feedlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = feedlab::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("feedlab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("FEEDLAB_SEED");
  }
  void TearDown() override {
    fs::remove_all(dir_);
    unsetenv("FEEDLAB_SEED");
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::vector<std::string> small_sim(const std::string& tag) const {
    return {"simulate", "--catalog", samples("catalog.csv"), "--profile", samples("profiles.json"),
            "--mode", "finite_fifo", "--k", "5", "--horizon", "3000", "--snapshot-interval", "1",
            "--snapshots-out", path(tag + "_snap.csv"), "--creations-out", path(tag + "_cre.csv")};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, MaxMinOverThirtyPublishersGivesOneEach) {
  const auto r = run({"allocate", "--catalog", samples("catalog.csv"), "--criterion", "max_min", "--k", "30"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  ASSERT_EQ(j.at("occupancy").size(), 30u);
  for (const auto& [id, n] : j.at("occupancy").items()) EXPECT_NEAR(n.get<double>(), 1.0, 1e-12) << id;
  EXPECT_EQ(j.at("alpha"), "inf");
  EXPECT_TRUE(j.at("multiplier").is_null());
}

TEST_F(Cli, RequestFileResolvesRelativePaths) {
  const auto r = run({"allocate", "--request", samples("allocate_request.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("level"), "class");
  EXPECT_EQ(j.at("user_id"), "bot1");
  EXPECT_NEAR(j.at("class_occupancy").at("1").get<double>(), 15.0, 1e-9);
  EXPECT_NEAR(j.at("class_occupancy").at("0").get<double>(), 15.0, 1e-9);
  EXPECT_EQ(j.at("occupancy").size(), 30u);
}

TEST_F(Cli, AllocateCsvHasBiasColumn) {
  const auto r = run({"allocate", "--catalog", samples("catalog.csv"), "--criterion", "proportional", "--k",
                      "30", "--format", "csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "key,occupancy,ttl,bias");
  EXPECT_EQ(io::parse_csv(r.out).size(), 31u);
}

TEST_F(Cli, SimulateEstimateValidatePipeline) {
  const auto sim = run(small_sim("a"));
  ASSERT_EQ(sim.code, 0) << sim.err;
  const auto est = run({"estimate", "--dataset", path("a_snap.csv"), "--creations", path("a_cre.csv"),
                        "--profile", samples("profiles.json"), "--visibility-model", "finite_fifo", "--k",
                        "5", "--out", path("est.json")});
  ASSERT_EQ(est.code, 0) << est.err;
  const auto e = json::parse(io::read_file(path("est.json")));
  EXPECT_EQ(e.at("K"), 5);
  EXPECT_TRUE(e.contains("two_class_ttl"));
  const auto val = run({"validate", "--model", path("est.json"), "--measured", path("est.json")});
  ASSERT_EQ(val.code, 0) << val.err;
  const auto v = json::parse(val.out);
  EXPECT_NEAR(v.at("beta1").get<double>(), 1.0, 0.05);
  EXPECT_LT(v.at("p_value_beta1").get<double>(), 1e-6);
  EXPECT_EQ(v.at("n"), 180);
}

TEST_F(Cli, SimulationRerunsAreByteIdentical) {
  auto args = small_sim("a");
  args.insert(args.end(), {"--seed", "11", "--threads", "4"});
  const auto a = run(args);
  args = small_sim("b");
  args.insert(args.end(), {"--seed", "11", "--threads", "1"});
  const auto b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(io::read_file(path("a_snap.csv")), io::read_file(path("b_snap.csv")));
  EXPECT_EQ(io::read_file(path("a_cre.csv")), io::read_file(path("b_cre.csv")));
}

TEST_F(Cli, SeedFallsBackToEnvironment) {
  const std::vector<std::string> base{"simulate", "--catalog", samples("catalog.csv"), "--profile",
                                      samples("profile.json"), "--feed-config", samples("feed.json"),
                                      "--horizon", "200"};
  setenv("FEEDLAB_SEED", "5", 1);
  const auto env5 = run(base);
  auto explicit5 = base;
  explicit5.insert(explicit5.end(), {"--seed", "5"});
  unsetenv("FEEDLAB_SEED");
  const auto arg5 = run(explicit5);
  const auto dflt = run(base);
  ASSERT_EQ(env5.code, 0) << env5.err;
  EXPECT_EQ(env5.out, arg5.out);
  EXPECT_NE(env5.out, dflt.out);
  EXPECT_EQ(json::parse(dflt.out).at("config").at("seed"), 1);

  setenv("FEEDLAB_SEED", "not-a-seed", 1);
  EXPECT_NE(run(base).code, 0);
}

TEST_F(Cli, SelfBiasIsZero) {
  ASSERT_EQ(run({"allocate", "--catalog", samples("catalog.csv"), "--profile", samples("profile.json"),
                 "--criterion", "proportional", "--k", "30", "--out", path("alloc.json")})
                .code,
            0);
  const auto r = run({"bias", "--occupancy", path("alloc.json"), "--baseline", path("alloc.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("user_id"), "bot1");
  for (const auto& [id, b] : j.at("bias").items()) EXPECT_EQ(b.get<double>(), 0.0) << id;
}

TEST_F(Cli, ModelFeedsBiasAndValidate) {
  ASSERT_EQ(run({"model", "--catalog", samples("catalog.csv"), "--profile", samples("profile.json"),
                 "--feed-config", samples("feed.json"), "--model-kind", "filtered_fifo", "--out",
                 path("model.json")})
                .code,
            0);
  const auto v = run({"validate", "--model", path("model.json"), "--measured", path("model.json")});
  ASSERT_EQ(v.code, 0) << v.err;
  EXPECT_NEAR(json::parse(v.out).at("beta1").get<double>(), 1.0, 1e-12);

  const auto b = run({"bias", "--occupancy", path("model.json"), "--baseline", "uniform", "--catalog",
                      samples("catalog.csv"), "--k", "30"});
  ASSERT_EQ(b.code, 0) << b.err;
  const auto j = json::parse(b.out);
  double total = 0.0;
  for (const auto& [id, x] : j.at("bias").items()) total += x.get<double>();
  EXPECT_EQ(j.at("bias").size(), 30u);
  EXPECT_NEAR(total, 0.0, 1e-12);
  // Liked publishers pass every post, so they gain over the uniform baseline.
  EXPECT_GT(j.at("bias").at("p01").get<double>(), 0.0);
  EXPECT_LT(j.at("bias").at("p30").get<double>(), 0.0);
}

TEST_F(Cli, BiasRejectsOccupancyNotSummingToK) {
  ASSERT_EQ(run({"model", "--catalog", samples("catalog.csv"), "--profile", samples("profile.json"),
                 "--feed-config", samples("feed.json"), "--model-kind", "ttl", "--out", path("ttl.json")})
                .code,
            0);
  const auto b = run({"bias", "--occupancy", path("ttl.json"), "--baseline", "uniform", "--catalog",
                      samples("catalog.csv"), "--k", "30"});
  EXPECT_EQ(b.code, 1);
  EXPECT_EQ(json::parse(b.err).at("error").at("module"), "allocator");
}

TEST_F(Cli, MissingFileIsStructuredError) {
  const auto r = run({"estimate", "--dataset", path("nope.csv"), "--k", "5"});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(r.out.empty());
  const auto j = json::parse(r.err).at("error");
  EXPECT_EQ(j.at("module"), "io");
  EXPECT_FALSE(j.at("operation").get<std::string>().empty());
  EXPECT_NE(j.at("message").get<std::string>().find("nope.csv"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  const auto r = run({"allocate", "--catalog", samples("catalog.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err).at("error").at("module"), "cli");
}

TEST_F(Cli, DomainErrorsCarryModule) {
  const auto r = run({"allocate", "--catalog", samples("catalog.csv"), "--k", "30", "--alpha", "-1",
                      "--criterion", "generic"});
  EXPECT_EQ(r.code, 1);
  const auto j = json::parse(r.err).at("error");
  EXPECT_EQ(j.at("kind"), "domain_error");
  EXPECT_EQ(j.at("module"), "allocator");
}
