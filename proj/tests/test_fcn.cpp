#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "corealloc/fcn.hpp"

using namespace corealloc;

namespace {

Dataset linear_data(std::size_t n, std::size_t p, std::uint64_t seed, double noise = 0.0) {
  Rng rng(seed);
  Dataset d{Eigen::MatrixXd(n, p), Eigen::VectorXd(n)};
  for (Eigen::Index r = 0; r < d.x.rows(); ++r) {
    double y = 0.0;
    for (Eigen::Index c = 0; c < d.x.cols(); ++c) {
      d.x(r, c) = standard_normal(rng);
      y += (c % 2 ? -0.5 : 1.0) * d.x(r, c);
    }
    d.y(r) = y + noise * standard_normal(rng);
  }
  return d;
}

double variance(const Eigen::VectorXd& v) { return (v.array() - v.mean()).square().mean(); }

double loss_at(const FcnModel& base, const Eigen::VectorXd& theta, const Dataset& d) {
  FcnModel m = base;
  unflatten(m, theta);
  return mse(m.forward(d.x), Eigen::MatrixXd(d.y));
}

}  // namespace

TEST(InitFcn, ParameterCount) {
  const auto m = init_fcn({4, 8, 1}, 0);
  EXPECT_EQ(m.parameter_count(), 4u * 8 + 8 + 8 * 1 + 1);
  EXPECT_EQ(m.parameter_count(), 49u);
  EXPECT_EQ(flatten(m).size(), 49);
}

TEST(InitFcn, SameSeedSameWeights) {
  const auto a = init_fcn({3, 5, 2, 1}, 7);
  const auto b = init_fcn({3, 5, 2, 1}, 7);
  EXPECT_EQ(flatten(a), flatten(b));
  EXPECT_NE(flatten(a), flatten(init_fcn({3, 5, 2, 1}, 8)));
}

TEST(InitFcn, NoHiddenLayerIsError) {
  EXPECT_THROW(init_fcn({4, 1}, 0), DataError);
  EXPECT_THROW(init_fcn({4, 0, 1}, 0), DataError);
}

TEST(InitFcn, WeightBounds) {
  const auto m = init_fcn({16, 4, 1}, 3);
  EXPECT_LE(m.W[0].cwiseAbs().maxCoeff(), 0.25);
  EXPECT_LE(m.W[1].cwiseAbs().maxCoeff(), 0.5);
  EXPECT_EQ(m.b[0].squaredNorm(), 0.0);
}

TEST(Train, ZeroTargetZeroOutputStartsAtZeroLoss) {
  Dataset d = linear_data(20, 3, 1);
  d.y.setZero();
  TrainConfig cfg;
  cfg.epochs = 3;
  const auto r = train(init_fcn({3, 6, 1}, 2, true), d, {}, cfg);
  EXPECT_EQ(r.history.front().epoch, 0u);
  EXPECT_EQ(r.history.front().train_mse, 0.0);
}

TEST(Train, NoiselessLinearTargetIsLearned) {
  const auto d = linear_data(400, 4, 3);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 0.01;
  cfg.seed = 4;
  const auto r = train(init_fcn(fcn_layout(4, {64}), 5), d, {}, cfg);
  EXPECT_LT(r.history.back().train_mse, 0.01 * variance(d.y));
  EXPECT_EQ(r.history.size(), 201u);
}

TEST(Train, GradientMatchesFiniteDifferences) {
  // (1, 3, 1) has 10 parameters.
  for (const auto& sizes : {std::vector<std::size_t>{1, 3, 1}, std::vector<std::size_t>{3, 4, 3, 1}}) {
    const auto model = init_fcn(sizes, 11);
    const auto d = linear_data(15, sizes.front(), 12, 0.3);
    FcnGradient g;
    loss_and_gradient(model, d.x, Eigen::MatrixXd(d.y), g);
    const Eigen::VectorXd analytic = flatten(g);
    const Eigen::VectorXd theta = flatten(model);
    ASSERT_EQ(analytic.size(), theta.size());
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd up = theta, down = theta;
      up(i) += h;
      down(i) -= h;
      const double numeric = (loss_at(model, up, d) - loss_at(model, down, d)) / (2.0 * h);
      EXPECT_NEAR(analytic(i), numeric, 1e-4 * std::max(1.0, std::abs(numeric))) << "parameter " << i;
    }
  }
}

TEST(Train, BestValidationCheckpointAndPatience) {
  const auto d = linear_data(100, 3, 20, 0.5);
  const auto v = linear_data(40, 3, 21, 0.5);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.learning_rate = 0.05;
  cfg.patience = 5;
  const auto r = train(init_fcn({3, 16, 1}, 1), d, v, cfg);
  EXPECT_LT(r.history.size(), 301u);
  double best = r.history.front().val_mse;
  std::size_t best_epoch = 0;
  for (const auto& e : r.history) {
    if (e.val_mse < best) {
      best = e.val_mse;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(r.best_val_mse, best);
  EXPECT_DOUBLE_EQ(mse(r.model.predict(v.x), v.y), best);
}

TEST(Train, Deterministic) {
  const auto d = linear_data(64, 3, 5, 0.1);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 9;
  const auto a = train(init_fcn({3, 8, 1}, 1), d, {}, cfg);
  const auto b = train(init_fcn({3, 8, 1}, 1), d, {}, cfg);
  EXPECT_EQ(flatten(a.model), flatten(b.model));
}

TEST(Train, RejectsBadConfig) {
  const auto d = linear_data(10, 2, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  EXPECT_THROW(train(init_fcn({2, 4, 1}, 0), d, {}, cfg), DataError);
  cfg.learning_rate = 0.01;
  EXPECT_THROW(train(init_fcn({3, 4, 1}, 0), d, {}, cfg), DataError);
}

TEST(Train, DivergenceIsNumericError) {
  auto d = linear_data(10, 2, 1);
  d.x *= 1e200;
  d.y *= 1e200;
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  EXPECT_THROW(train(init_fcn({2, 4, 1}, 0), d, {}, cfg), NumericError);
}

TEST(Bootstrap, SingleSample) {
  const auto d = linear_data(30, 2, 1);
  const auto s = bootstrap_augment(d, 1, 4);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].rows(), 30u);
}

TEST(Bootstrap, ConcatenatedSize) {
  const auto d = linear_data(200, 2, 1);
  const auto all = concatenate(bootstrap_augment(d, 100, 4));
  EXPECT_EQ(all.rows(), 20000u);
  EXPECT_EQ(all.y.size(), 20000);
}

TEST(Bootstrap, SampleRowsComeFromData) {
  const auto d = linear_data(25, 2, 1);
  const auto s = bootstrap_augment(d, 3, 9);
  for (const auto& part : s) {
    for (Eigen::Index r = 0; r < part.x.rows(); ++r) {
      bool found = false;
      for (Eigen::Index q = 0; q < d.x.rows() && !found; ++q) found = part.x.row(r) == d.x.row(q) && part.y(r) == d.y(q);
      EXPECT_TRUE(found);
    }
  }
}

TEST(Bootstrap, EnsemblePredictionVarianceIsFinite) {
  const auto d = linear_data(200, 3, 2, 0.3);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.learning_rate = 0.02;
  const auto ens = train_ensemble(init_fcn({3, 8, 1}, 1), bootstrap_augment(d, 100, 3), {}, cfg);
  ASSERT_EQ(ens.members.size(), 100u);
  const Eigen::MatrixXd probe = Eigen::MatrixXd::Constant(1, 3, 0.5);
  Eigen::VectorXd preds(100);
  for (int s = 0; s < 100; ++s) preds(s) = ens.members[static_cast<std::size_t>(s)].predict(probe)(0);
  const double var = variance(preds);
  EXPECT_TRUE(std::isfinite(var));
  EXPECT_GT(var, 0.0);
  EXPECT_NEAR(ens.predict(probe)(0), preds.mean(), 1e-12);
}

TEST(Evaluate, PerfectPredictor) {
  FcnModel m = init_fcn({1, 1, 1}, 0);
  m.W[0](0, 0) = 1.0;
  m.W[1](0, 0) = 1.0;
  Dataset t{Eigen::MatrixXd(4, 1), Eigen::VectorXd(4)};
  t.x << 0.5, 1, 2, 3;
  t.y << 0.5, 1, 2, 3;
  const auto e = evaluate(m, t);
  EXPECT_EQ(e.mse, 0.0);
  EXPECT_EQ(e.params, 4u);
}

TEST(Evaluate, MeanPredictorGivesVariance) {
  const auto d = linear_data(50, 2, 6, 1.0);
  FcnModel m = init_fcn({2, 3, 1}, 0, true);
  m.b[1](0) = d.y.mean();
  EXPECT_NEAR(evaluate(m, d).mse, variance(d.y), 1e-9);
}

TEST(TextFormat, RoundTrip) {
  const auto m = init_fcn({5, 7, 3, 1}, 42);
  std::stringstream s;
  write_fcn(s, m);
  const auto back = read_fcn(s);
  EXPECT_EQ(back.sizes, m.sizes);
  EXPECT_EQ(flatten(back), flatten(m));
  EXPECT_EQ(s.str().substr(0, 5), "fcn 1");
}

TEST(TextFormat, RejectsGarbage) {
  std::istringstream in("not a model\n");
  EXPECT_THROW(read_fcn(in), DataError);
}

TEST(TextFormat, MissingFileIsDataError) { EXPECT_THROW(load_fcn("/nonexistent/model.txt"), DataError); }

TEST(TextFormat, LossCsv) {
  std::ostringstream out;
  write_loss_csv(out, {{0, 1.5, 2.0}, {1, 1.0, 1.25}});
  EXPECT_EQ(out.str(), "epoch,train_mse,val_mse\n0,1.5,2\n1,1,1.25\n");
}
