#include "cli.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace heavytail;
using namespace heavytail::cli;

namespace {

struct Invocation {
  int code = -1;
  std::string out, err;
};

Invocation run(std::vector<std::string> args) {
  args.insert(args.begin(), "heavytail");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Invocation r;
  r.code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("heavytail_cli_" + name)).string();
}

std::string write_file(const std::string& name, const std::string& text) {
  const std::string p = temp_path(name);
  std::ofstream(p) << text;
  return p;
}

std::string write_matrix(const std::string& name, const Matrix& m, const std::vector<std::string>& header = {}) {
  const std::string p = temp_path(name);
  std::ofstream f(p);
  write_csv(f, m, header);
  return p;
}

Matrix student_rows(int d, long n, double nu, std::uint64_t seed) {
  DatasetSpec s;
  s.family.family = Family::student_t;
  s.family.nu = nu;
  s.d = d;
  s.n = n;
  s.seed = seed;
  return generate_vector(s).x;
}

bool same_bits(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (long i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i] || std::signbit(a.data()[i]) != std::signbit(b.data()[i])) return false;
  return true;
}

}  // namespace

TEST(Csv, RoundTripIsLossless) {
  Matrix x = student_rows(4, 500, 2.5, 3);
  x(0, 0) = std::numeric_limits<double>::denorm_min();
  x(0, 1) = std::numeric_limits<double>::max();
  x(0, 2) = -0.0;
  x(0, 3) = 0.1;
  x(1, 0) = -std::numeric_limits<double>::min();
  std::stringstream ss;
  write_csv(ss, x);
  EXPECT_TRUE(same_bits(read_csv(ss, "mem").values, x));
}

TEST(Csv, HeaderIsOptional) {
  const Matrix x = student_rows(3, 20, 4.0, 5);
  std::stringstream a, b;
  write_csv(a, x, {"x0", "x1", "x2"});
  write_csv(b, x);
  const CsvTable ta = read_csv(a, "a"), tb = read_csv(b, "b");
  EXPECT_EQ(ta.header, (std::vector<std::string>{"x0", "x1", "x2"}));
  EXPECT_TRUE(tb.header.empty());
  EXPECT_TRUE(same_bits(ta.values, x));
  EXPECT_TRUE(same_bits(tb.values, x));
}

TEST(Csv, DiagnosticsCarryLineNumbers) {
  auto message = [](const std::string& text) {
    std::stringstream ss(text);
    try {
      read_csv(ss, "data.csv");
    } catch (const InputError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message("1,2\n\n3\n"), "data.csv:3: expected 2 fields, found 1");
  EXPECT_EQ(message("a,b\n1,2\n3,oops\n"), "data.csv:3: field 2 is not a number: 'oops'");
  EXPECT_EQ(message("a,b\n"), "data.csv: no data rows");
  EXPECT_EQ(message("1,2,\n"), "data.csv:1: field 3 is not a number: ''");
}

TEST(Cli, SimulateDumpMatchesGenerator) {
  const std::string p = temp_path("dump.csv");
  const Invocation r = run({"simulate", "--scenario", "pareto_tail", "--a", "3.5", "--d", "3", "--n", "50", "--trials",
                     "100", "--seed", "17", "--dump", p});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream f(p);
  const CsvTable t = read_csv(f, p);
  DatasetSpec s;
  s.family.family = Family::pareto_tail;
  s.family.a = 3.5;
  s.d = 3;
  s.n = 50;
  s.true_mean = Vector::Zero(3);
  s.seed = CounterRng(17).substream(0).key();
  EXPECT_TRUE(same_bits(t.values, generate_vector(s).x));
  EXPECT_EQ(t.header.size(), 3u);
}

TEST(Cli, OutputIsByteIdentical) {
  const std::string p = write_matrix("det.csv", student_rows(2, 300, 5.0, 8));
  const std::vector<std::string> mean{"mean", "--input", p, "--v", "1.7", "--T", "3.4"};
  const Invocation a = run(mean), b = run(mean);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const json j = json::parse(a.out);
  EXPECT_EQ(j["schema"], "1");
  EXPECT_EQ(j["m_hat"].size(), 2u);

  const std::vector<std::string> gram{"gram", "--input", p, "--T", "40", "--seed", "4"};
  const Invocation c = run(gram), d = run(gram);
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(c.out, d.out);
  const json g = json::parse(c.out);
  EXPECT_EQ(g["G_hat"].size(), 2u);
  EXPECT_EQ(g["sigma_hat"].size(), 2u);
  EXPECT_TRUE(g.contains("sup_gap"));
  EXPECT_TRUE(g.contains("certified"));
}

TEST(Cli, SeedComesFromEnvironment) {
  DatasetSpec s;
  s.family.family = Family::student_t;
  s.family.nu = 5.0;
  s.p = s.q = 2;
  s.n = 100;
  s.seed = 2;
  const MatrixScenario m = generate_matrix(s);
  Matrix rows(s.n, 4);
  for (long i = 0; i < s.n; ++i) rows.row(i) << m.sample.data[i](0, 0), m.sample.data[i](0, 1),
      m.sample.data[i](1, 0), m.sample.data[i](1, 1);
  const std::string p = write_matrix("mat.csv", rows);
  auto args = [&](std::vector<std::string> extra) {
    std::vector<std::string> a{"matrix-mean", "--input", p, "--rows", "2", "--cols", "2", "--draws", "200",
                               "--v", std::to_string(m.bounds.v), "--t", std::to_string(m.bounds.t),
                               "--u", std::to_string(m.bounds.u), "--T", std::to_string(m.bounds.T)};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  ::setenv("HEAVYTAIL_SEED", "11", 1);
  const Invocation env = run(args({}));
  ::unsetenv("HEAVYTAIL_SEED");
  const Invocation flag = run(args({"--seed", "11"}));
  const Invocation other = run(args({"--seed", "12"}));
  ASSERT_EQ(env.code, 0) << env.err;
  EXPECT_EQ(env.out, flag.out);
  EXPECT_NE(flag.out, other.out);

  ::setenv("HEAVYTAIL_SEED", "eleven", 1);
  const Invocation bad = run(args({}));
  ::unsetenv("HEAVYTAIL_SEED");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("HEAVYTAIL_SEED"), std::string::npos);
}

TEST(Cli, InputErrorsExitTwo) {
  const std::string good = write_matrix("good.csv", student_rows(2, 50, 5.0, 1));
  const std::string bad = write_file("bad.csv", "x,y\n1,2\n3\n");

  Invocation r = run({"mean", "--input", good, "--v", "1", "--T", "2", "--frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--frobnicate"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);

  r = run({"mean", "--input", bad, "--v", "1", "--T", "2"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(bad + ":3:"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());

  r = run({"mean", "--input", temp_path("missing.csv"), "--v", "1", "--T", "2"});
  EXPECT_EQ(r.code, 2);

  r = run({"mean", "--input", good, "--v", "1", "--T", "2", "--delta", "1.5"});
  EXPECT_EQ(r.code, 2);

  r = run({"mean", "--input", good, "--v", "3", "--T", "2"});
  EXPECT_EQ(r.code, 2);

  r = run({"matrix-mean", "--input", good, "--rows", "2", "--cols", "2", "--v", "1", "--t", "2", "--u", "2", "--T",
           "4"});
  EXPECT_EQ(r.code, 2);

  r = run({});
  EXPECT_EQ(r.code, 2);

  r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("simulate"), std::string::npos);
}

TEST(Cli, RequireCertifiedExitsThree) {
  const std::string p = write_matrix("cert.csv", student_rows(3, 200, 5.0, 21));
  const std::vector<std::string> base{"gram", "--input", p, "--T", "100", "--max-rounds", "1"};
  Invocation r = run(base);
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_FALSE(json::parse(r.out)["certified"].get<bool>());
  auto strict = base;
  strict.push_back("--require-certified");
  r = run(strict);
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(r.out.empty());

  r = run({"gram", "--input", p, "--T", "100", "--require-certified"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(json::parse(r.out)["certified"].get<bool>());
}

TEST(Cli, RegressReportsSelectionAndBounds) {
  DatasetSpec s;
  s.family.family = Family::student_t;
  s.family.nu = 8.0;
  s.d = 2;
  s.n = 400;
  s.true_theta = Vector::Unit(2, 0);
  s.seed = 6;
  const RegressionScenario sc = generate_regression(s);
  Matrix rows(s.n, 3);
  rows << sc.data.X, sc.data.Y;
  const std::string p = write_matrix("reg.csv", rows, {"x0", "x1", "y"});
  json b{{"v", sc.bounds.v}, {"T", sc.bounds.T}, {"v'", sc.bounds.v_prime}, {"T'", sc.bounds.T_prime}};
  const std::string bounds = write_file("bounds.json", b.dump());

  Invocation r = run({"regress", "--input", p, "--bounds", bounds, "--ridge", "0.1", "--norm-cap", "3", "--family",
               "nested:1,2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["d"], 2);
  const double eps = j["epsilon"], eta = j["eta"];
  EXPECT_NEAR(j["bounds"]["prediction"].get<double>(), 2.0 * (3.0 * eps + eta), 1e-12);
  const int k = j["model"]["index"];
  EXPECT_TRUE(k == 0 || k == 1);
  const Vector th = Eigen::Map<const Vector>(j["theta"].get<std::vector<double>>().data(), 2);
  EXPECT_LE(th.norm(), 3.0 + 1e-9);

  r = run({"regress", "--input", p, "--bounds", b.dump()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(json::parse(r.out)["bounds"].is_null());

  r = run({"regress", "--input", p, "--bounds", b.dump(), "--family", "supports:0;1"});
  EXPECT_EQ(r.code, 2);
  r = run({"regress", "--input", p, "--bounds", "{\"v\": 1}"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("T"), std::string::npos);
  r = run({"regress", "--input", p, "--bounds", b.dump(), "--family", "nested:1,5", "--norm-cap", "3"});
  EXPECT_EQ(r.code, 2);
}
