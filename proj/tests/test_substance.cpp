#include <doctest.h>

#include <cmath>
#include <fstream>

#include "photoshape/error.hpp"
#include "photoshape/rng.hpp"
#include "photoshape/substance.hpp"
#include "support.hpp"

using namespace photoshape;
using namespace photoshape::substance;

namespace {

RawDistribution raw_one(std::vector<std::string> labels, std::vector<double> probs) {
  RawDistribution r;
  r.width = 1;
  r.height = 1;
  r.labels = std::move(labels);
  r.probs = std::move(probs);
  return r;
}

double p(const SubstanceMap& m, Substance s, std::size_t pixel = 0) { return m.row(pixel)[static_cast<int>(s)]; }

SubstanceMap random_map(int w, int h, Rng& rng) {
  SubstanceMap m(w, h);
  std::fill(m.foreground.values.begin(), m.foreground.values.end(), 1);
  for (std::size_t i = 0; i < m.foreground.values.size(); ++i) {
    double s = 0;
    for (int k = 0; k < kSubstanceCount; ++k) s += (m.row(i)[k] = rng.uniform());
    for (int k = 0; k < kSubstanceCount; ++k) m.row(i)[k] /= s;
  }
  return m;
}

}  // namespace

TEST_SUITE("substance") {
  TEST_CASE("alias mass folds into canonical labels") {
    const auto m = remap_substances(raw_one({"carpet", "wood"}, {0.6, 0.4}));
    CHECK(p(m, Substance::fabric) == doctest::Approx(0.6));
    CHECK(p(m, Substance::wood) == doctest::Approx(0.4));
    CHECK_FALSE(m.flagged.values[0]);
  }

  TEST_CASE("no canonical mass becomes uniform and flagged") {
    const auto m = remap_substances(raw_one({"sky"}, {1.0}));
    for (auto s : kAllSubstances) CHECK(p(m, s) == doctest::Approx(0.2));
    CHECK(m.flagged.values[0]);
  }

  TEST_CASE("other labels are zeroed and the rest renormalised") {
    const auto m = remap_substances(raw_one({"wood", "sky", "metal"}, {0.3, 0.4, 0.3}));
    CHECK(p(m, Substance::wood) == doctest::Approx(0.5));
    CHECK(p(m, Substance::metal) == doctest::Approx(0.5));
    CHECK(p(m, Substance::fabric) == 0.0);
  }

  TEST_CASE("rows that do not sum to 1 are rejected") {
    CHECK_THROWS_AS(remap_substances(raw_one({"wood", "metal"}, {0.3, 0.3})), Error);
  }

  TEST_CASE("remap preserves canonical plus aliased mass before renormalisation") {
    Rng rng(1);
    const std::vector<std::string> labels{"leather", "carpet", "sky", "steel", "wood", "glass", "plastic", "fabric"};
    RawDistribution raw;
    raw.width = 8;
    raw.height = 8;
    raw.labels = labels;
    for (int i = 0; i < 64; ++i) {
      std::vector<double> row(labels.size());
      double s = 0;
      for (auto& v : row) s += (v = rng.uniform());
      for (auto& v : row) raw.probs.push_back(v / s);
    }
    const auto m = remap_substances(raw);
    const auto set = SubstanceSet::with_default_aliases();
    for (std::size_t px = 0; px < 64; ++px) {
      std::array<double, kSubstanceCount> expected{};
      double total = 0;
      for (std::size_t k = 0; k < labels.size(); ++k)
        if (auto s = set.resolve(labels[k])) {
          expected[static_cast<int>(*s)] += raw.probs[px * labels.size() + k];
          total += raw.probs[px * labels.size() + k];
        }
      double sum = 0;
      for (int s = 0; s < kSubstanceCount; ++s) {
        CHECK(m.row(px)[s] == doctest::Approx(expected[s] / total).epsilon(1e-12));
        sum += m.row(px)[s];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }

  TEST_CASE("aliases cannot shadow canonical names") {
    auto set = SubstanceSet::with_default_aliases();
    CHECK_THROWS_AS(set.add_alias("wood", Substance::metal), Error);
    CHECK(set.resolve("chrome") == Substance::metal);
    CHECK_FALSE(set.resolve("rubber").has_value());
  }

  TEST_CASE("part labelling by majority") {
    LabelMap parts(10, 1, 2);
    SubstanceMap s(10, 1);
    std::fill(s.foreground.values.begin(), s.foreground.values.end(), 1);
    for (int x = 0; x < 10; ++x) {
      parts.at(x, 0) = 1;
      double* r = s.row(x);
      std::fill(r, r + kSubstanceCount, 0.0);
      r[static_cast<int>(x < 7 ? Substance::wood : Substance::metal)] = 1.0;
    }
    const auto l = aggregate_part_substance(parts, s);
    CHECK(l.labels[0] == Substance::wood);
    CHECK(l.counts[0][static_cast<int>(Substance::wood)] == 7);
    CHECK_FALSE(l.labels[1].has_value());
    CHECK(l.unknown_parts == std::vector<int>{1});
  }

  TEST_CASE("part outside the substance foreground is unknown") {
    LabelMap parts(4, 4, 1);
    for (auto& v : parts.labels) v = 1;
    SubstanceMap s(4, 4);
    const auto l = aggregate_part_substance(parts, s);
    CHECK_FALSE(l.labels[0].has_value());
    CHECK(l.unknown_parts == std::vector<int>{0});
  }

  TEST_CASE("count ties go to summed mass") {
    LabelMap parts(2, 1, 1);
    parts.at(0, 0) = parts.at(1, 0) = 1;
    SubstanceMap s(2, 1);
    std::fill(s.foreground.values.begin(), s.foreground.values.end(), 1);
    double* a = s.row(0);
    std::fill(a, a + 5, 0.0);
    a[static_cast<int>(Substance::wood)] = 0.9;
    a[static_cast<int>(Substance::metal)] = 0.1;
    double* b = s.row(1);
    std::fill(b, b + 5, 0.0);
    b[static_cast<int>(Substance::metal)] = 0.6;
    b[static_cast<int>(Substance::wood)] = 0.4;
    CHECK(aggregate_part_substance(parts, s).labels[0] == Substance::wood);
  }

  TEST_CASE("aggregation matches a brute-force tally and ignores pixel order") {
    Rng rng(7);
    for (int t = 0; t < 5; ++t) {
      LabelMap parts(32, 32, 4);
      for (auto& v : parts.labels) v = static_cast<std::uint16_t>(rng.index(5));
      auto s = random_map(32, 32, rng);
      for (int i = 0; i < 50; ++i) s.foreground.values[rng.index(1024)] = 0;
      const auto l = aggregate_part_substance(parts, s);
      for (int part = 1; part <= 4; ++part) {
        std::array<int, 5> count{};
        std::array<double, 5> mass{};
        for (std::size_t px = 0; px < 1024; ++px) {
          if (parts.labels[px] != part || !s.foreground.values[px]) continue;
          const double* r = s.row(px);
          int best = 0;
          for (int k = 1; k < 5; ++k)
            if (r[k] > r[best] || (r[k] == r[best] && name(static_cast<Substance>(k)) < name(static_cast<Substance>(best))))
              best = k;
          ++count[best];
          for (int k = 0; k < 5; ++k) mass[k] += r[k];
        }
        int win = 0;
        for (int k = 1; k < 5; ++k)
          if (count[k] > count[win] || (count[k] == count[win] && mass[k] > mass[win]) ||
              (count[k] == count[win] && mass[k] == mass[win] && name(static_cast<Substance>(k)) < name(static_cast<Substance>(win))))
            win = k;
        REQUIRE(l.labels[part - 1].has_value());
        CHECK(static_cast<int>(*l.labels[part - 1]) == win);
      }

      // Same pixels in a permuted order.
      std::vector<std::size_t> perm(1024);
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
      LabelMap p2 = parts;
      SubstanceMap s2 = s;
      for (std::size_t i = 0; i < 1024; ++i) {
        p2.labels[i] = parts.labels[perm[i]];
        s2.foreground.values[i] = s.foreground.values[perm[i]];
        std::copy(s.row(perm[i]), s.row(perm[i]) + 5, s2.row(i));
      }
      CHECK(aggregate_part_substance(p2, s2).labels == l.labels);
    }
  }

  TEST_CASE("map files round trip") {
    Rng rng(3);
    const auto dir = testing::temp_dir("pssm");
    auto m = random_map(9, 6, rng);
    m.foreground.values[4] = 0;
    write_substance_map(dir / "a.pssm", m);
    const auto back = read_substance_map(dir / "a.pssm");
    CHECK(back.foreground == m.foreground);
    for (std::size_t i = 0; i < m.probs.size(); ++i)
      if (m.foreground.values[i / 5]) CHECK(back.probs[i] == doctest::Approx(m.probs[i]).epsilon(1e-6));

    auto raw = raw_one({"carpet", "sky"}, {0.25, 0.75});
    write_raw(dir / "r.pssm", raw);
    CHECK(read_raw(dir / "r.pssm").labels == raw.labels);
    CHECK(read_substance_map(dir / "r.pssm").row(0)[static_cast<int>(Substance::fabric)] == doctest::Approx(1.0));
  }

  TEST_CASE("fixture classifier returns its input") {
    Rng rng(4);
    const auto m = random_map(8, 8, rng);
    FixtureClassifier c(std::map<std::string, SubstanceMap>{{"ex", m}});
    CHECK(c.classify(RgbImage(8, 8, 3), Mask(8, 8), "ex") == m);
    try {
      c.classify(RgbImage(8, 8, 3), Mask(8, 8), "missing");
      FAIL("expected a plugin error");
    } catch (const PluginError& e) {
      CHECK(e.exemplar_id() == "missing");
    }
  }

  TEST_CASE("colour prior rows sum to 1 and picks wood for a brown swatch") {
    RgbImage img(6, 6, 3, 0);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        img.at(x, y, 0) = 115;
        img.at(x, y, 1) = 83;
        img.at(x, y, 2) = 52;
      }
    Mask mask(6, 6);
    std::fill(mask.values.begin(), mask.values.end(), 1);
    ColorPriorClassifier c;
    const auto m = c.classify(img, mask, "wood");
    for (std::size_t i = 0; i < 36; ++i) {
      double s = 0;
      for (int k = 0; k < 5; ++k) s += m.row(i)[k];
      CHECK(std::abs(s - 1.0) <= 1e-9);
      CHECK(argmax(m.row(i)) == Substance::wood);
    }
    const auto rnd = c.classify(testing::random_image(16, 16, 2), testing::disc_mask(16, 8, 8, 6), "r");
    for (std::size_t i = 0; i < 256; ++i)
      if (rnd.foreground.values[i]) {
        double s = 0;
        for (int k = 0; k < 5; ++k) s += rnd.row(i)[k];
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
  }

  TEST_CASE("subprocess plugin protocol") {
    const auto dir = testing::temp_dir("plugin");
    Rng rng(5);
    const auto m = random_map(10, 10, rng);
    write_substance_map(dir / "canned.pssm", m);
    {
      std::ofstream s(dir / "plugin.sh");
      s << "#!/bin/sh\n[ -f \"$1\" ] || exit 3\ncp " << (dir / "canned.pssm").string() << " \"$2\"\ncp "
        << (dir / "canned.pssm.json").string() << " \"$2.json\"\n";
    }
    std::filesystem::permissions(dir / "plugin.sh", std::filesystem::perms::owner_all);
    Mask mask(10, 10);
    std::fill(mask.values.begin(), mask.values.end(), 1);
    mask.values[0] = 0;
    auto c = make_classifier("subprocess:" + (dir / "plugin.sh").string(), dir / "work");
    const auto got = c->classify(RgbImage(10, 10, 3, 200), mask, "chair/1");
    CHECK_FALSE(got.foreground.values[0]);
    CHECK(got.row(5)[2] == doctest::Approx(m.row(5)[2]).epsilon(1e-6));

    auto failing = make_classifier("subprocess:false", dir / "work");
    try {
      failing->classify(RgbImage(10, 10, 3, 200), mask, "ex7");
      FAIL("expected a plugin error");
    } catch (const PluginError& e) {
      CHECK(e.exemplar_id() == "ex7");
    }
    CHECK_THROWS_AS(make_classifier("neural", dir), Error);
  }
}
