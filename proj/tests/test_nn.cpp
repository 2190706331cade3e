#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "purl/checkpoint.hpp"
#include "purl/nn.hpp"
#include "support.hpp"

using namespace purl;

namespace {

Network hand_net() {
  Network net;
  DenseLayer l1(2, 2, Activation::relu);
  l1.weights = Matrix(2, 2, {1, -1, 2, 1});
  l1.bias = {0.5, -1};
  DenseLayer l2(2, 2, Activation::identity);
  l2.weights = Matrix(2, 2, {1, 2, -1, 0.5});
  l2.bias = {0, 1};
  net.layers = {l1, l2};
  return net;
}

double loss_of(const Network& net, const Matrix& x, const std::vector<std::size_t>& y) {
  return loss_and_grads(net, x, y).loss;
}

Matrix random_batch(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = g(rng);
  return m;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, classes - 1);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = d(rng);
  return y;
}

// Largest relative error between analytic and central-difference gradients.
double gradient_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Network net = make_mlp({3, 4, 3, 2}, rng);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& l : net.layers) {
    for (double& b : l.bias) b = g(rng);
  }
  const Matrix x = random_batch(5, 3, rng);
  const auto y = random_labels(5, 2, rng);
  const Gradients an = loss_and_grads(net, x, y).grads;
  const double h = 1e-5;
  double worst = 0.0;
  auto compare = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = loss_of(net, x, y);
    param = keep - h;
    const double down = loss_of(net, x, y);
    param = keep;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto w = net.layers[li].weights.values();
    for (std::size_t i = 0; i < w.size(); ++i) compare(w[i], an.weights[li][i]);
    for (std::size_t o = 0; o < net.layers[li].bias.size(); ++o) compare(net.layers[li].bias[o], an.bias[li][o]);
  }
  return worst;
}

}  // namespace

TEST(Forward, IdentityLayerPassesInputThrough) {
  Network net;
  DenseLayer l(3, 3, Activation::identity);
  l.weights = Matrix::identity(3);
  net.layers.push_back(l);
  const Matrix x(2, 3, {1.5, -2, 0.25, 4, 0, -1});
  EXPECT_EQ(forward(net, x), x);
}

TEST(Forward, FullyMaskedNetGivesZeroLogits) {
  std::mt19937_64 rng(3);
  Network net = make_mlp({4, 5, 3}, rng);
  for (auto& l : net.layers) {
    l.mask.fill(0.0);
    l.enforce_mask();
  }
  std::mt19937_64 r2(4);
  const Matrix out = forward(net, random_batch(6, 4, r2));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, HandComputedTwoLayerRelu) {
  // hidden = relu([1-2+0.5, 2+2-1]) = [0, 3]; logits = [0+6+0, 0+1.5+1]
  const Matrix out = forward(hand_net(), Matrix(1, 2, {1, 2}));
  EXPECT_DOUBLE_EQ(out(0, 0), 6.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 2.5);
}

TEST(Forward, WrongInputWidthIsDimensionError) {
  EXPECT_THROW(forward(hand_net(), Matrix(1, 3)), DimensionError);
}

TEST(Loss, UniformLogitsGiveLogC) {
  Network net;
  DenseLayer l(2, 5, Activation::identity);
  net.layers.push_back(l);  // zero weights and bias
  const auto r = loss_and_grads(net, Matrix(3, 2, {1, 2, 3, 4, 5, 6}), std::vector<std::size_t>{0, 3, 4});
  EXPECT_NEAR(r.loss, std::log(5.0), 1e-12);
}

TEST(Loss, GradientsMatchCentralDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) EXPECT_LT(gradient_check(seed), 1e-4) << "seed " << seed;
}

TEST(Loss, ZeroInputGivesZeroFirstLayerWeightGradient) {
  std::mt19937_64 rng(9);
  Network net = make_mlp({3, 4, 2}, rng);
  const auto r = loss_and_grads(net, Matrix(4, 3), std::vector<std::size_t>{0, 1, 1, 0});
  for (double v : r.grads.weights[0].values()) EXPECT_EQ(v, 0.0);
}

TEST(Loss, NonFiniteActivationReportsLayer) {
  Network net = hand_net();
  net.layers[1].weights(0, 1) = std::numeric_limits<double>::infinity();
  try {
    loss_and_grads(net, Matrix(1, 2, {1, 2}), std::vector<std::size_t>{0});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.layer(), 1u);
  }
}

TEST(Sgd, ArithmeticStep) {
  Network net;
  DenseLayer l(1, 1, Activation::identity);
  l.weights(0, 0) = 1.0;
  net.layers.push_back(l);
  Gradients g = Gradients::zeros_like(net);
  g.weights[0](0, 0) = 0.5;
  sgd_step(net, g, 0.1);
  EXPECT_DOUBLE_EQ(net.layers[0].weights(0, 0), 0.95);
}

TEST(Sgd, MaskedWeightStaysZero) {
  Network net = hand_net();
  net.layers[0].mask(0, 1) = 0.0;
  net.layers[0].enforce_mask();
  Gradients g = Gradients::zeros_like(net);
  g.weights[0](0, 1) = 3.0;
  sgd_step(net, g, 0.1);
  EXPECT_EQ(net.layers[0].weights(0, 1), 0.0);
}

TEST(Sgd, RejectsNonPositiveLearningRate) {
  Network net = hand_net();
  EXPECT_THROW(sgd_step(net, Gradients::zeros_like(net), 0.0), ConfigError);
}

TEST(Sgd, SmallStepDecreasesLoss) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    Network net = make_mlp({3, 4, 3, 2}, rng);
    const Matrix x = random_batch(8, 3, rng);
    const auto y = random_labels(8, 2, rng);
    const auto before = loss_and_grads(net, x, y);
    sgd_step(net, before.grads, 1e-3);
    EXPECT_LT(loss_of(net, x, y), before.loss) << "seed " << seed;
  }
}

TEST(Adam, RespectsMask) {
  std::mt19937_64 rng(2);
  Network net = make_mlp({3, 4, 2}, rng);
  net.layers[0].mask(1, 2) = 0.0;
  net.layers[0].enforce_mask();
  Adam opt(net, 0.01);
  const Matrix x = random_batch(4, 3, rng);
  for (int i = 0; i < 20; ++i) opt.step(net, loss_and_grads(net, x, std::vector<std::size_t>{0, 1, 0, 1}).grads);
  EXPECT_EQ(net.layers[0].weights(1, 2), 0.0);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(5);
  const Matrix p = softmax(random_batch(7, 4, rng));
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Accuracy, ConstantPredictionOnBalancedSetIsOneOverC) {
  Network net;
  DenseLayer l(4, 3, Activation::identity);
  l.bias = {0, 0, 1};
  net.layers.push_back(l);
  EXPECT_DOUBLE_EQ(evaluate_accuracy(net, test::toy_dataset(300, 4, 3, 1)), 1.0 / 3.0);
}

TEST(Accuracy, FullyPrunedNetTiesToLowestClass) {
  std::mt19937_64 rng(1);
  Network net = make_mlp({4, 6, 4}, rng);
  for (auto& l : net.layers) {
    l.mask.fill(0.0);
    l.enforce_mask();
  }
  EXPECT_DOUBLE_EQ(evaluate_accuracy(net, test::toy_dataset(400, 4, 4, 2)), 0.25);
}

TEST(Training, MasksSurviveRetraining) {
  std::mt19937_64 rng(4);
  Network net = make_mlp({4, 8, 3}, rng);
  for (std::size_t i = 0; i < net.layers[0].mask.size(); i += 3) net.layers[0].mask[i] = 0.0;
  net.layers[0].enforce_mask();
  const auto data = test::toy_dataset(200, 4, 3, 7);
  retrain(net, data, {3, 0.05, 16}, rng);
  for (std::size_t i = 0; i < net.layers[0].mask.size(); i += 3) EXPECT_EQ(net.layers[0].weights[i], 0.0);
  EXPECT_NO_THROW(net.validate());
}

TEST(Training, LearnsSeparableData) {
  std::mt19937_64 rng(8);
  Network net = make_mlp({4, 16, 3}, rng);
  const auto data = test::toy_dataset(300, 4, 3, 11);
  retrain(net, data, {10, 0.05, 16}, rng);
  EXPECT_GT(evaluate_accuracy(net, data), 0.9);
}

TEST(Training, DeterministicForFixedSeed) {
  const auto data = test::toy_dataset(120, 4, 3, 5);
  auto run = [&] {
    std::mt19937_64 rng(42);
    Network net = make_mlp({4, 8, 3}, rng);
    retrain(net, data, {2, 0.05, 8}, rng);
    return checksum(net);
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(6);
  Network net = make_mlp({5, 4, 3}, rng);
  net.layers[1].mask(2, 1) = 0.0;
  net.layers[1].enforce_mask();
  const auto dir = test::scratch_dir("ckpt");
  save_checkpoint(net, dir / "m.json", 77, "qnet");
  const Checkpoint back = load_checkpoint_file(dir / "m.json");
  EXPECT_EQ(back.network, net);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.role, "qnet");
}

TEST(Checkpoint, MalformedInputsAreRejected) {
  auto j = checkpoint_to_json(Checkpoint{hand_net(), 1, "model"});
  auto bad_version = j;
  bad_version["version"] = 2;
  EXPECT_THROW(checkpoint_from_json(bad_version), IoError);
  auto bad_mask = j;
  bad_mask["layers"][0]["mask"][0] = 2;
  EXPECT_THROW(checkpoint_from_json(bad_mask), IoError);
  auto short_weights = j;
  short_weights["layers"][0]["weights"].erase(0);
  EXPECT_THROW(checkpoint_from_json(short_weights), IoError);
  EXPECT_THROW(load_checkpoint_file("/nonexistent/ckpt.json"), IoError);
}
