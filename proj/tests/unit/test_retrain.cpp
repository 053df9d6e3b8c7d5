#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "exmap/data.hpp"
#include "exmap/error.hpp"
#include "exmap/retrain.hpp"
#include "exmap/train.hpp"

using namespace exmap;
using namespace exmap::retrain;

namespace {

pseudo::PseudoGroupLabels groups_of_sizes(const std::vector<std::size_t>& sizes) {
  // Group g = class g/2, attribute g%2; samples laid out group by group.
  std::vector<int> cls, attr;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    for (std::size_t i = 0; i < sizes[g]; ++i) {
      cls.push_back(static_cast<int>(g / 2));
      attr.push_back(static_cast<int>(g % 2));
    }
  }
  return pseudo::cross(cls, attr, (sizes.size() + 1) / 2, 2, pseudo::Source::kTrueLabels);
}

// Two Gaussian classes in `dim` dimensions; only the first `informative`
// coordinates carry signal.
Matrix two_class_features(std::size_t n, std::size_t dim, std::size_t informative, double shift,
                          std::uint64_t seed, std::vector<int>* labels) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Matrix x(n, dim);
  labels->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    (*labels)[i] = y;
    for (std::size_t j = 0; j < dim; ++j) {
      x(i, j) = nd(gen) + (j < informative ? (y == 0 ? -shift : shift) : 0.0);
    }
  }
  return x;
}

std::vector<const Tensor*> frozen_params(const nn::Network& net) {
  std::vector<const Tensor*> out;
  auto& mut = const_cast<nn::Network&>(net);
  const auto params = mut.parameters();
  for (std::size_t i = 0; i + 2 < params.size(); ++i) out.push_back(params[i]);
  return out;
}

}  // namespace

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(0.5, 0.2) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(soft_threshold(-0.1, 0.2) == 0.0);
  CHECK(soft_threshold(-0.5, 0.2) == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(soft_threshold(0.2, 0.2) == 0.0);
}

TEST_CASE("balanced subsampling") {
  SUBCASE("unequal groups give the smallest size from each") {
    const auto g = groups_of_sizes({40, 10, 25, 10});
    const auto idx = subsample_balanced(g, 1);
    CHECK(idx.size() == 40);
    std::map<int, std::size_t> per;
    for (auto i : idx) ++per[g.group_ids[i]];
    for (int k = 0; k < 4; ++k) CHECK(per[k] == 10);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 40);
    CHECK(subsample_balanced(g, 1) == idx);
    CHECK(subsample_balanced(g, 2) != idx);
  }
  SUBCASE("equal groups give a permutation of every index") {
    const auto g = groups_of_sizes({7, 7, 7, 7});
    auto idx = subsample_balanced(g, 3);
    std::sort(idx.begin(), idx.end());
    std::vector<std::size_t> all(28);
    std::iota(all.begin(), all.end(), 0);
    CHECK(idx == all);
  }
  SUBCASE("empty cells are skipped") {
    const auto g = groups_of_sizes({12, 0, 5, 9});
    const auto idx = subsample_balanced(g, 4);
    CHECK(idx.size() == 15);
    for (auto i : idx) CHECK(g.group_ids[i] != 1);
  }
}

TEST_CASE("feature statistics floor the std") {
  Matrix x(3, 2);
  x(0, 0) = 1;
  x(1, 0) = 2;
  x(2, 0) = 3;
  const auto s = feature_stats(x);
  CHECK(s.mean[0] == doctest::Approx(2.0));
  CHECK(s.std[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(s.std[1] == kStdFloor);
}

TEST_CASE("L1 logistic regression") {
  std::vector<int> y;
  const auto x = two_class_features(200, 10, 3, 0.7, 1, &y);

  SUBCASE("objective never increases") {
    const auto fit = fit_l1_logreg(x, y, 2, 0.01);
    REQUIRE(fit.objective.size() >= 2);
    for (std::size_t i = 1; i < fit.objective.size(); ++i) CHECK(fit.objective[i] <= fit.objective[i - 1]);
    CHECK(fit.converged);
  }
  SUBCASE("nonzero count never grows with the strength") {
    // The sweep list is descending, so counts must not decrease along it.
    std::size_t prev = 0;
    for (double lambda : DfrConfig{}.l1_strengths) {
      const auto n = fit_l1_logreg(x, y, 2, lambda).layer.nonzero_weights();
      CHECK(n >= prev);
      prev = n;
    }
    CHECK(prev > 0);
  }
  SUBCASE("huge strength zeroes the weights and the bias gives the prior") {
    std::vector<int> skew(200, 0);
    for (std::size_t i = 0; i < 50; ++i) skew[i] = 1;
    const auto fit = fit_l1_logreg(x, skew, 2, 1e6);
    CHECK(fit.layer.nonzero_weights() == 0);
    const double p1 = 1.0 / (1.0 + std::exp(fit.layer.bias[0] - fit.layer.bias[1]));
    CHECK(p1 == doctest::Approx(0.25).epsilon(1e-4));
  }
  SUBCASE("no penalty separates separable data") {
    std::vector<int> ys;
    const auto xs = two_class_features(100, 2, 2, 5.0, 2, &ys);
    const auto fit = fit_l1_logreg(xs, ys, 2, 0.0);
    CHECK(fit.layer.predict(xs) == ys);
  }
  SUBCASE("one class is an error") {
    CHECK_THROWS_AS(fit_l1_logreg(x, std::vector<int>(200, 1), 2, 0.1), Error);
  }
  SUBCASE("folded dense layer matches the standardised model") {
    const auto layer = fit_l1_logreg(x, y, 2, 0.01).layer;
    const auto dense = layer.to_dense();
    const auto logits = layer.logits(x);
    for (std::size_t i = 0; i < 20; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        double z = dense.bias[c];
        for (std::size_t j = 0; j < 10; ++j) z += x(i, j) * dense.weight[j * 2 + c];
        CHECK(z == doctest::Approx(logits(i, c)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("averaging identical layers returns the layer unchanged") {
  std::vector<int> y;
  const auto x = two_class_features(60, 4, 2, 1.0, 3, &y);
  const auto layer = fit_l1_logreg(x, y, 2, 0.03).layer;
  const std::vector<LastLayer> copies(20, layer);
  CHECK(average_last_layers(copies) == layer);
}

TEST_CASE("config validation") {
  DfrConfig bad;
  bad.l1_strengths = {0.1, 0.3};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.l1_strengths = {0.1, 0.0};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.n_final_subsamples = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  JttConfig j;
  j.upweights = {0.5};
  CHECK_THROWS_AS(j.validate(), Error);
}

TEST_CASE("DFR on a desk net") {
  data::SpuriousSpec spec;
  spec.correlation = 0.9;
  spec.train_size = 600;
  spec.val_size = 600;
  spec.test_size = 200;
  const auto d = data::generate(spec);
  const auto net = nn::make_desk_net(Shape{3, 28, 28}, 2, 0);
  const auto groups = pseudo::from_true_groups(d.val);
  DfrConfig cfg;
  cfg.n_sweep_splits = 2;
  cfg.n_final_subsamples = 3;
  const auto r = dfr_retrain(net, d.val, groups, cfg);

  SUBCASE("only the final layer changes") {
    const auto before = frozen_params(net);
    const auto after = frozen_params(r.net);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(*before[i] == *after[i]);
    CHECK(!(r.net.final_dense() == net.final_dense()));
    CHECK(r.net.final_dense() == r.layer.to_dense());
  }
  SUBCASE("report") {
    CHECK(r.report.sweep_scores.size() == cfg.l1_strengths.size());
    CHECK(std::find(cfg.l1_strengths.begin(), cfg.l1_strengths.end(), r.report.chosen_l1) != cfg.l1_strengths.end());
    CHECK(r.report.num_groups == 4);
    CHECK(r.report.nonzero_weights == r.layer.nonzero_weights());
    CHECK(r.report.to_json().find("\"chosen_l1\"") != std::string::npos);
  }
  SUBCASE("seeded") {
    CHECK(dfr_retrain(net, d.val, groups, cfg).layer == r.layer);
  }
  SUBCASE("a group too small to halve is an error") {
    std::vector<int> cls = d.val.class_labels, attr(d.val.size(), 0);
    attr[0] = 1;
    const auto tiny = pseudo::cross(cls, attr, 2, 2, pseudo::Source::kGExMap);
    CHECK_THROWS_AS(dfr_retrain(net, d.val, tiny, cfg), Error);
  }
}

TEST_CASE("JTT") {
  CHECK(jtt_weights(std::vector<int>{0, 1, 1}, std::vector<int>{0, 0, 1}, 5.0) == std::vector<double>{1, 5, 1});

  data::SpuriousSpec spec;
  spec.correlation = 0.9;
  spec.train_size = 400;
  spec.val_size = 400;
  spec.test_size = 200;
  const auto d = data::generate(spec);
  const auto init = nn::make_desk_net(Shape{3, 28, 28}, 2, 1);
  const auto groups = pseudo::from_true_groups(d.val);
  nn::TrainConfig tc;
  tc.epochs = 2;
  tc.learning_rate = 0.05;

  SUBCASE("upweight 1 is plain ERM retraining") {
    JttConfig jc;
    jc.id_epochs = {1};
    jc.upweights = {1.0};
    const auto r = jtt_retrain(init, d, groups, jc, tc);
    REQUIRE(r.grid.size() == 1);
    const nn::ModelScore worst = [&](const nn::Network& n) {
      return worst_group_accuracy(nn::predict_classes(n, d.val.images), d.val.class_labels, groups.group_ids);
    };
    const auto plain = nn::train_erm(init, d, tc, nn::TrainOptions{{}, worst});
    const auto a = const_cast<nn::Network&>(r.net).parameters();
    const auto b = const_cast<nn::Network&>(plain.net).parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t k = 0; k < a[i]->size(); ++k) CHECK((*a[i])[k] == doctest::Approx((*b[i])[k]).epsilon(1e-12));
    }
  }
  SUBCASE("grid search keeps the best candidate") {
    JttConfig jc;
    jc.id_epochs = {1};
    jc.upweights = {2.0, 10.0};
    const auto r = jtt_retrain(init, d, groups, jc, tc);
    REQUIRE(r.grid.size() == 2);
    for (const auto& c : r.grid) CHECK(c.val_worst_group <= r.chosen.val_worst_group);
    CHECK(r.to_json().find("\"grid\"") != std::string::npos);
  }
  SUBCASE("an empty error set falls back to plain training") {
    data::SpuriousSpec easy = spec;
    easy.correlation = 1.0;
    easy.core_noise = 0.0;
    const auto e = data::generate(easy);
    JttConfig jc;
    jc.id_epochs = {4};
    jc.upweights = {5.0};
    nn::TrainConfig fast = tc;
    fast.learning_rate = 0.1;
    const auto r = jtt_retrain(init, e, pseudo::from_true_groups(e.val), jc, fast);
    CHECK(r.chosen.error_set_size == 0);
    CHECK(r.chosen.fallback);
  }
}
