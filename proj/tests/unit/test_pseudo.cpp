#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "exmap/cluster.hpp"
#include "exmap/data.hpp"
#include "exmap/error.hpp"
#include "exmap/lrp.hpp"
#include "exmap/pseudo_label.hpp"
#include "exmap/train.hpp"

using namespace exmap;
using namespace exmap::pseudo;

namespace {

// Fake 2x2 heatmaps: attribute a puts its mass in pixel a, plus noise.
lrp::HeatmapSet two_pattern_maps(const std::vector<int>& attrs, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 0.05);
  lrp::HeatmapSet set;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    lrp::RelevanceMap m;
    m.sample_index = i;
    m.relevance = Tensor(Shape{1, 2, 2});
    for (auto& v : m.relevance.data()) v = nd(gen);
    m.relevance[static_cast<std::size_t>(attrs[i])] += 1.0;
    set.maps.push_back(std::move(m));
  }
  return set;
}

std::vector<int> attr_indices(const data::GroupedDataset& d) {
  std::vector<int> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d.attr_index(i);
  return out;
}

std::set<std::set<std::size_t>> partition(const PseudoGroupLabels& g) {
  std::set<std::set<std::size_t>> out;
  for (const auto& members : g.members()) {
    if (!members.empty()) out.insert({members.begin(), members.end()});
  }
  return out;
}

}  // namespace

TEST_CASE("crossing classes with attributes") {
  const auto g = cross({0, 0, 1, 1}, {0, 1, 0, 1}, 2, 2, Source::kGExMap);
  CHECK(g.group_ids == std::vector<int>{0, 1, 2, 3});
  CHECK(g.num_groups() == 4);
  CHECK(g.num_nonempty() == 4);
  g.validate();

  SUBCASE("constant attribute leaves flagged empty cells") {
    const auto c = cross({0, 1, 1, 0}, {0, 0, 0, 0}, 2, 2, Source::kGExMap);
    CHECK(c.num_nonempty() == 2);
    CHECK(c.empty_cells == std::vector<bool>{false, true, false, true});
    CHECK(c.members()[1].empty());
  }
  SUBCASE("every group id decodes back to its cell") {
    std::mt19937_64 gen(3);
    std::vector<int> cls(200), attr(200);
    for (auto& c : cls) c = static_cast<int>(gen() % 3);
    for (auto& a : attr) a = static_cast<int>(gen() % 4);
    const auto r = cross(cls, attr, 3, 4, Source::kLExMap);
    for (std::size_t i = 0; i < 200; ++i) {
      CHECK(r.group_ids[i] / 4 == cls[i]);
      CHECK(r.group_ids[i] % 4 == attr[i]);
    }
  }
  SUBCASE("relabelling clusters permutes groups but not their members") {
    std::mt19937_64 gen(4);
    std::vector<int> cls(100), attr(100);
    for (auto& c : cls) c = static_cast<int>(gen() % 2);
    for (auto& a : attr) a = static_cast<int>(gen() % 3);
    const std::vector<int> perm{2, 0, 1};
    auto relabelled = attr;
    for (auto& a : relabelled) a = perm[static_cast<std::size_t>(a)];
    CHECK(partition(cross(cls, attr, 2, 3, Source::kGExMap)) ==
          partition(cross(cls, relabelled, 2, 3, Source::kGExMap)));
  }
  SUBCASE("out-of-range inputs") {
    CHECK_THROWS_AS(cross({0, 2}, {0, 0}, 2, 1, Source::kGExMap), Error);
    CHECK_THROWS_AS(cross({0, 1}, {0, 1}, 2, 1, Source::kGExMap), Error);
    CHECK_THROWS_AS(cross({0, 1}, {0}, 2, 1, Source::kGExMap), Error);
  }
}

TEST_CASE("global clustering of heatmaps") {
  std::vector<int> cls, attr;
  for (int i = 0; i < 60; ++i) {
    cls.push_back(i % 2);
    attr.push_back((i / 2) % 2);
  }
  const auto maps = two_pattern_maps(attr, 1);
  const auto g = gexmap(maps, cls, 2);
  CHECK(g.source == Source::kGExMap);
  CHECK(g.num_nonempty() == 4);
  CHECK(cluster::adjusted_rand_index(g.attr_labels, attr) == 1.0);
  CHECK(g.class_labels == cls);
  CHECK(gexmap(maps, cls, 2).group_ids == g.group_ids);
  CHECK_THROWS_AS(gexmap(maps, std::vector<int>(59, 0), 2), Error);
}

TEST_CASE("per-class clustering") {
  SUBCASE("each class splits in two") {
    std::vector<int> cls, attr;
    for (int i = 0; i < 80; ++i) {
      cls.push_back(i % 2);
      attr.push_back((i / 2) % 2);
    }
    const auto l = lexmap(two_pattern_maps(attr, 2), cls, 2);
    CHECK(l.source == Source::kLExMap);
    CHECK(l.num_nonempty() == 4);
    for (int c = 0; c < 2; ++c) {
      std::vector<int> got, want;
      for (std::size_t i = 0; i < cls.size(); ++i) {
        if (cls[i] != c) continue;
        got.push_back(l.attr_labels[i]);
        want.push_back(attr[i]);
      }
      CHECK(cluster::adjusted_rand_index(got, want) == 1.0);
    }
  }
  SUBCASE("minimum class size") {
    std::vector<int> cls(104, 0), attr(104);
    for (std::size_t i = 0; i < 104; ++i) attr[i] = static_cast<int>(i % 2);
    for (std::size_t i = 100; i < 104; ++i) cls[i] = 1;
    CHECK_NOTHROW(lexmap(two_pattern_maps(attr, 3), cls, 2));
    cls.pop_back();
    attr.pop_back();
    CHECK_THROWS_AS(lexmap(two_pattern_maps(attr, 3), cls, 2), Error);
  }
}

TEST_CASE("k-means clustering choice") {
  std::vector<int> cls, attr;
  for (int i = 0; i < 60; ++i) {
    cls.push_back(i % 2);
    attr.push_back((i / 2) % 3);
  }
  ClusterChoice choice;
  choice.method = cluster::Method::kKMeans;
  choice.kmeans_k = 3;
  const auto g = gexmap(two_pattern_maps(attr, 4), cls, 2, choice);
  CHECK(g.attr_range == 3);
  CHECK(cluster::adjusted_rand_index(g.attr_labels, attr) == 1.0);
}

TEST_CASE("feature baseline and true groups") {
  data::SpuriousSpec spec;
  spec.train_size = spec.val_size = spec.test_size = 300;
  spec.correlation = 0.9;
  const auto d = data::generate(spec).val;
  const auto net = nn::make_desk_net(Shape{3, 28, 28}, 2, 0);
  const auto f = george_features(net, d);
  CHECK(f.rows == d.size());
  CHECK(f.cols == 64);
  for (std::size_t i = 0; i < f.rows; ++i) {
    double m = 0.0;
    for (double v : f.row(i)) m = std::max(m, std::abs(v));
    CHECK((m == 0.0 || std::abs(m - 1.0) < 1e-15));
  }
  const auto g = george(net, d);
  CHECK(g.source == Source::kGeorge);
  CHECK(g.size() == d.size());
  g.validate();

  const auto t = from_true_groups(d);
  CHECK(t.group_ids == d.group_ids);
  CHECK(t.attr_labels == attr_indices(d));
  CHECK(t.source == Source::kTrueLabels);
}

TEST_CASE("pseudo-label CSV") {
  const auto g = cross({0, 1, 1, 0, 1}, {1, 0, 1, 1, 0}, 2, 2, Source::kLExMap);
  const auto text = to_csv(g);
  CHECK(text.rfind("sample_index,class,attr,group_id,source\n0,0,1,1,lexmap\n", 0) == 0);
  const auto back = parse_csv(text, 2);
  CHECK(back.group_ids == g.group_ids);
  CHECK(back.attr_labels == g.attr_labels);
  CHECK(back.source == Source::kLExMap);

  const auto bad = [](const std::string& s) {
    try {
      parse_csv(s, 2);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::kFormat;
    }
    return false;
  };
  CHECK(bad(""));
  CHECK(bad("sample_index,class,attr,group_id,source\n"));
  CHECK(bad("sample_index,class,attr,group_id,source\n0,0,1,1,gexmap\n1,1,0,2,lexmap\n"));
  CHECK(bad("sample_index,class,attr,group_id,source\n0,0,1,3,gexmap\n"));
  CHECK(bad("sample_index,class,attr,group_id,source\n1,0,1,1,gexmap\n"));
  CHECK(bad("sample_index,class,attr,group_id,source\n0,x,1,1,gexmap\n"));
  CHECK(bad("sample_index,class,attr,group_id,source\n0,5,1,11,gexmap\n"));
}

TEST_CASE("heatmaps of a shortcut-trained net recover the tint") {
  data::SpuriousSpec spec;
  spec.correlation = 0.99;
  spec.train_size = 4000;
  spec.val_size = 1000;
  spec.test_size = 200;
  const auto d = data::generate(spec);
  nn::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 0.1;
  const auto net = nn::train_erm(nn::make_desk_net(Shape{3, 28, 28}, 2, 0), d, cfg).net;
  const auto maps = lrp::heatmap_set(net, d.val, {});
  const auto g = gexmap(maps, d.val.class_labels, 2);
  CHECK(cluster::adjusted_rand_index(g.attr_labels, attr_indices(d.val)) >= 0.6);
}
