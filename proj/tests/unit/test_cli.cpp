#include <doctest.h>

#include <sstream>

#include "commands.hpp"
#include "helpers.hpp"
#include "json.hpp"
#include "rsv/dgp.hpp"

using namespace rsv;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and usage errors") {
    CHECK(run({"--help"}).code == 0);
    const Run bad = run({"estimate", "--nope"});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("InvalidArgument") != std::string::npos);
    CHECK(run({}).code == 2);
  }

  TEST_CASE("estimate writes reproducible outputs with the run config") {
    const auto dir = testutil::scratch("cli_estimate");
    const std::string csv = (dir / "d.csv").string();
    REQUIRE(run({"generate", "--n", "1200", "--tau", "0.3", "--seed", "4", "--out", csv}).code == 0);
    const std::vector<std::string> args = {"estimate", "--data", csv, "--bootstrap", "40", "--seed", "2", "--out",
                                           (dir / "a").string()};
    const Run r = run(args);
    REQUIRE(r.code == 0);
    auto args_b = args;
    args_b.back() = (dir / "b").string();
    REQUIRE(run(args_b).code == 0);
    CHECK(testutil::slurp(dir / "a" / "estimate.csv").find("# run_config: ") == 0);
    const auto ja = nlohmann::json::parse(testutil::slurp(dir / "a" / "estimate.json"));
    auto jb = nlohmann::json::parse(testutil::slurp(dir / "b" / "estimate.json"));
    CHECK(ja["run_config"]["estimation"]["bootstrap"] == 40);
    jb["run_config"]["out"] = ja["run_config"]["out"];
    CHECK(ja.dump() == jb.dump());
    CHECK(ja.contains("theta_hat"));
    CHECK(ja.contains("meta"));
  }

  TEST_CASE("exit codes follow the error class") {
    const auto dir = testutil::scratch("cli_errors");
    CHECK(run({"estimate", "--data", (dir / "missing.csv").string(), "--out", dir.string()}).code == 2);
    std::string flat = "sample,treatment,outcome,r_1\n";
    for (int i = 0; i < 20; ++i) flat += "e,1,NA,1\ne,0,NA,1\no,NA,1,1\no,NA,0,1\neo,1,1,1\neo,0,0,1\n";
    testutil::spit(dir / "flat.csv", flat);
    const Run irr = run({"estimate", "--data", (dir / "flat.csv").string(), "--representation", "pred_y", "--bootstrap",
                         "0", "--out", dir.string()});
    CHECK(irr.code == 3);
    CHECK(irr.err.find("IrrelevantRSV") != std::string::npos);
    const Run spec = run({"simulate", "--methods", "ours,magic", "--reps", "1", "--out", dir.string()});
    CHECK(spec.code == 2);
    CHECK(spec.err.find("InvalidSpec") != std::string::npos);
    CHECK(run({"simulate", "--n-grid", "0", "--out", dir.string()}).code == 2);
  }

  TEST_CASE("simulate orders rows and ignores the thread count") {
    cli::McConfig mc;
    mc.base.seed = 5;
    mc.tau_grid = {0.0, 0.2};
    mc.n_grid = {300, 400};
    mc.reps = 3;
    mc.methods = {"benchmark", "ours"};
    mc.est.bootstrap = 0;
    mc.threads = 1;
    const auto a = cli::run_monte_carlo(mc);
    mc.threads = 3;
    const auto b = cli::run_monte_carlo(mc);
    REQUIRE(a.size() == 24);
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].method == b[i].method);
      CHECK(a[i].estimate == b[i].estimate);
    }
    CHECK(a.front().method == "benchmark");
    CHECK(a[1].rep == 1);
    CHECK(a[3].n == 400);
    const auto s = cli::summarize(a);
    REQUIRE(s.size() == 8);
    CHECK(s[0].reps == 3);
  }

  TEST_CASE("simulate and diagnose write their files") {
    const auto dir = testutil::scratch("cli_files");
    REQUIRE(run({"simulate", "--tau-grid", "0.1", "--n-grid", "500", "--reps", "2", "--bootstrap", "20", "--out",
                 (dir / "mc").string()})
                .code == 0);
    const std::string results = testutil::slurp(dir / "mc" / "mc_results.csv");
    CHECK(results.find("# run_config: ") == 0);
    CHECK(results.find("method,tau,n,rep,truth,estimate,se,ci_low,ci_high,error") != std::string::npos);
    CHECK(testutil::slurp(dir / "mc" / "mc_summary.csv").find("rmse") != std::string::npos);

    const std::string csv = (dir / "d.csv").string();
    REQUIRE(run({"generate", "--n", "1000", "--seed", "1", "--out", csv}).code == 0);
    const Run d = run({"diagnose", "--data", csv, "--bootstrap", "30", "--out", (dir / "diag").string()});
    REQUIRE(d.code == 0);
    const auto j = nlohmann::json::parse(testutil::slurp(dir / "diag" / "diagnostics.json"));
    CHECK(j.contains("relevance"));
    CHECK(j.contains("specification"));
    CHECK(j.contains("stability"));
    CHECK(testutil::slurp(dir / "diag" / "stability.csv").find("# run_config: ") == 0);
  }
}
