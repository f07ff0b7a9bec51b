#include <doctest.h>

#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fairft/error.hpp"
#include "fairft/model.hpp"
#include "support.hpp"

using namespace fairft;
using namespace fairft::ad;
using testing::same_bits;
using testing::uniform;

TEST_SUITE("model") {
  TEST_CASE("build is deterministic") {
    const ModelSpec s{4, {8}, 7};
    CHECK(same_bits(testing::copy(build_mlp(s).params().values()), testing::copy(build_mlp(s).params().values())));
  }

  TEST_CASE("parameter counts and partition") {
    const DecomposableModel m = build_mlp({4, {8}, 7});
    CHECK(m.parameter_count() == 49);
    CHECK(m.head_offset() == 40);
    const Partition p = partition(m);
    REQUIRE(p.extractor.size() == 40);
    REQUIRE(p.head.size() == 9);
    CHECK(p.extractor.front() == 0);
    CHECK(p.extractor.back() == 39);
    CHECK(p.head.front() == 40);
    CHECK(p.head.back() == 48);
  }

  TEST_CASE("head boundary") {
    const DecomposableModel m = build_mlp({2, {3, 3}, 1});
    CHECK(m.head_boundary() == 2);
    CHECK(m.layers().size() == 3);
    CHECK(m.head().out == 1);
  }

  TEST_CASE("partition is disjoint and exhaustive over random specs") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> dim(1, 9), depth(1, 3);
    for (int rep = 0; rep < 100; ++rep) {
      ModelSpec s{dim(rng), {}, rng()};
      for (std::size_t l = depth(rng); l > 0; --l) s.hidden_dims.push_back(dim(rng));
      const DecomposableModel m = build_mlp(s);
      const Partition p = partition(m);
      std::set<std::size_t> all(p.extractor.begin(), p.extractor.end());
      for (std::size_t id : p.head) CHECK(all.insert(id).second);
      CHECK(all.size() == m.parameter_count());
      CHECK(*all.rbegin() == m.parameter_count() - 1);
      const auto map = m.layer_map();
      for (std::size_t id : p.head) CHECK(map[id] == m.head_boundary());
      for (std::size_t id : p.extractor) CHECK(map[id] < m.head_boundary());
    }
  }

  TEST_CASE("invalid specs") {
    CHECK_THROWS_AS(build_mlp({0, {4}, 1}), SpecError);
    CHECK_THROWS_AS(build_mlp({3, {}, 1}), SpecError);
    CHECK_THROWS_AS(build_mlp({3, {4, 0}, 1}), SpecError);
  }

  TEST_CASE("predict") {
    std::mt19937_64 rng(2);
    DecomposableModel zero(ModelSpec{3, {5}, 0});
    const Tensor x = Tensor::matrix(6, 3, uniform(rng, 18, -10, 10));
    const Tensor p0 = zero.predict(x);
    CHECK(p0.shape() == Shape{6, 1});
    for (double v : p0.values()) CHECK(v == 0.5);

    const DecomposableModel m = build_mlp({3, {5}, 4});
    const auto before = testing::copy(m.params().values());
    const Tensor p1 = predict(m, x), p2 = predict(m, x);
    CHECK(same_bits(testing::copy(p1.values()), testing::copy(p2.values())));
    CHECK(same_bits(before, testing::copy(m.params().values())));
    for (double v : p1.values()) CHECK((v > 0.0 && v < 1.0));

    CHECK_THROWS_AS(m.predict(Tensor::matrix(2, 4, std::vector<double>(8, 0.0))), DimensionError);
  }

  TEST_CASE("save and load round trip") {
    std::mt19937_64 rng(3);
    const auto dir = testing::scratch_dir("model");
    const DecomposableModel m = build_mlp({4, {8}, 11});
    save_model(m, dir / "m.json");
    const DecomposableModel back = load_model(dir / "m.json");
    CHECK(back.spec() == m.spec());
    CHECK(back.head_boundary() == m.head_boundary());
    CHECK(back.parameter_count() == 49);
    CHECK(same_bits(testing::copy(back.params().values()), testing::copy(m.params().values())));
    const Tensor x = Tensor::matrix(7, 4, uniform(rng, 28, -3, 3));
    CHECK(same_bits(testing::copy(m.predict(x).values()), testing::copy(back.predict(x).values())));
  }

  TEST_CASE("corrupt model files") {
    const auto dir = testing::scratch_dir("model_corrupt");
    save_model(build_mlp({4, {8}, 11}), dir / "m.json");
    std::ifstream in(dir / "m.json");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    {
      std::ofstream out(dir / "trunc.json");
      out << text.substr(0, text.size() / 2);
    }
    CHECK_THROWS_AS(load_model(dir / "trunc.json"), FormatError);

    auto doc = model_to_json(build_mlp({4, {8}, 11}));
    doc["format_version"] = 99;
    CHECK_THROWS_AS(model_from_json(doc), FormatError);
    CHECK_THROWS_AS(load_model(dir / "missing.json"), FormatError);
  }
}
