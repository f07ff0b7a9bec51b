#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "fairft/data.hpp"
#include "fairft/error.hpp"
#include "support.hpp"

using namespace fairft;
using testing::ex;

namespace {

Dataset groups_example() {
  Dataset d;
  for (int i = 0; i < 100; ++i) d.examples.push_back(ex({double(i)}, i < 60 ? 1 : 0, 0));
  for (int i = 0; i < 40; ++i) d.examples.push_back(ex({double(1000 + i)}, i < 10 ? 1 : 0, 1));
  return d;
}

std::map<std::pair<int, int>, std::size_t> cell_counts(const Dataset& d) {
  std::map<std::pair<int, int>, std::size_t> c;
  for (const auto& e : d.examples) ++c[{e.a, e.y}];
  return c;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("rho of one couples attribute and label") {
    SyntheticSpec s;
    s.n = 500;
    s.rho = 1.0;
    s.seed = 3;
    for (const auto& e : generate_synthetic(s).examples) CHECK(e.a == e.y);
  }

  TEST_CASE("rho of one half decouples attribute and label") {
    SyntheticSpec s;
    s.n = 10000;
    s.rho = 0.5;
    s.seed = 4;
    std::size_t same = 0;
    for (const auto& e : generate_synthetic(s).examples) same += e.a == e.y;
    CHECK(double(same) / 10000.0 == doctest::Approx(0.5).epsilon(0.04));
  }

  TEST_CASE("synthetic moments and determinism") {
    SyntheticSpec s;
    s.n = 4000;
    s.mu = 1.0;
    s.seed = 5;
    const Dataset d = generate_synthetic(s);
    CHECK(d == generate_synthetic(s));
    CHECK(d.dim() == 8);
    double sum = 0.0;
    std::size_t n1 = 0;
    for (const auto& e : d.examples)
      if (e.y == 1) sum += e.x[0], ++n1;
    CHECK(std::abs(sum / double(n1) - 1.0) <= 4.0 / std::sqrt(double(n1)));

    s.rho = 0.4;
    CHECK_THROWS_AS(generate_synthetic(s), SpecError);
  }

  TEST_CASE("build_external example") {
    const Dataset e = build_external(groups_example(), 9);
    CHECK(e.role == Role::external);
    const auto c = cell_counts(e);
    CHECK(c.at({0, 1}) == 10);
    CHECK(c.at({0, 0}) == 30);
    CHECK(c.at({1, 1}) == 10);
    CHECK(c.at({1, 0}) == 30);
    REQUIRE(e.balance);
    CHECK(e.balance->group_size == 40);
    CHECK(e.balance->group_positives == 10);
    CHECK(e.balance->exact_ratio);
  }

  TEST_CASE("balanced input is a fixed point up to ordering") {
    Dataset d;
    for (int i = 0; i < 20; ++i) d.examples.push_back(ex({double(i)}, i % 2, i / 10));
    const Dataset e = build_external(d, 1);
    auto key = [](const LabeledExample& x) { return x.x[0]; };
    std::vector<double> a, b;
    for (const auto& x : d.examples) a.push_back(key(x));
    for (const auto& x : e.examples) b.push_back(key(x));
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }

  TEST_CASE("group without positives is a balancing error") {
    Dataset d;
    for (int i = 0; i < 10; ++i) d.examples.push_back(ex({0.0}, i % 2, 0));
    for (int i = 0; i < 10; ++i) d.examples.push_back(ex({0.0}, 0, 1));
    CHECK_THROWS_AS(build_external(d, 1), BalancingError);
  }

  TEST_CASE("kfold split") {
    Dataset d;
    for (int i = 0; i < 100; ++i) d.examples.push_back(ex({double(i)}, i % 2, (i / 2) % 2));
    const auto folds = kfold_split(d, 5, 7);
    REQUIRE(folds.size() == 5);
    std::multiset<double> seen;
    for (const auto& f : folds) {
      CHECK(f.valid.size() == 20);
      CHECK(f.train.size() == 80);
      for (const auto& e : f.valid.examples) seen.insert(e.x[0]);
    }
    CHECK(seen.size() == 100);
    CHECK(std::set<double>(seen.begin(), seen.end()).size() == 100);

    const auto again = kfold_split(d, 5, 7);
    for (std::size_t k = 0; k < 5; ++k) CHECK(again[k].valid == folds[k].valid);
    CHECK_THROWS_AS(kfold_split(d, 101, 7), SplitError);
    CHECK_THROWS_AS(kfold_split(d, 1, 7), SplitError);

    d.examples.resize(103);
    for (int i = 100; i < 103; ++i) d.examples[i] = ex({double(i)}, 1, 0);
    for (const auto& f : kfold_split(d, 5, 1)) CHECK((f.valid.size() == 20 || f.valid.size() == 21));
  }

  TEST_CASE("stratified subsample keeps every cell") {
    const Dataset e = build_external(groups_example(), 2);
    const Dataset s = subsample_stratified(e, 0.2, 3);
    const auto c = cell_counts(s);
    CHECK(c.at({0, 1}) == 2);
    CHECK(c.at({0, 0}) == 6);
    CHECK(c.at({1, 1}) == 2);
    CHECK(c.at({1, 0}) == 6);
    CHECK(subsample_stratified(e, 1.0, 3).size() == e.size());
  }

  TEST_CASE("csv parsing") {
    const auto dir = testing::scratch_dir("data_csv");
    {
      std::ofstream f(dir / "ok.csv");
      f << "x0,x1,y,a\n0.5,-1.0,1,0\n";
    }
    const Dataset d = load_csv(dir / "ok.csv");
    REQUIRE(d.size() == 1);
    CHECK(d.examples[0] == ex({0.5, -1.0}, 1, 0));

    {
      std::ofstream f(dir / "bad.csv");
      f << "x0,x1,y,a\n0.5,-1.0,1,0\n0.5,-1.0,2,0\n";
    }
    try {
      load_csv(dir / "bad.csv");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }

    {
      std::ofstream f(dir / "cols.csv");
      f << "x0,y\n0.5,1\n";
    }
    CHECK_THROWS_AS(load_csv(dir / "cols.csv"), ParseError);

    {
      std::ofstream f(dir / "group.csv");
      f << "x0,y,a\n0.5,1,2\n";
    }
    CHECK_THROWS_AS(load_csv(dir / "group.csv", 2), ParseError);
  }

  TEST_CASE("csv round trip is exact") {
    const auto dir = testing::scratch_dir("data_roundtrip");
    SyntheticSpec s;
    s.n = 300;
    s.seed = 8;
    const Dataset d = generate_synthetic(s);
    save_csv(d, dir / "d.csv");
    CHECK(load_csv(dir / "d.csv") == d);
  }
}
