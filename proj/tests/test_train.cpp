#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>
#include <sstream>

#include "convnorm/train.hpp"
#include "oracles.hpp"

using namespace convnorm;

namespace {

KernelStack deltas(std::size_t c_out, std::size_t c_in, std::size_t k) {
  std::vector<double> w(c_out * c_in * k * k, 0.0);
  for (std::size_t o = 0; o < c_out; ++o) w[(o * c_in + (o % c_in)) * k * k] = 1.0;
  return KernelStack(c_out, c_in, k, k, std::move(w));
}

SyntheticTask small_task(std::uint64_t seed, std::size_t n = 8) {
  TaskConfig c;
  c.seed = seed;
  c.height = c.width = 8;
  c.n_train = n;
  c.n_test = 4;
  return generate_synthetic_task(c);
}

ActivationBatch slice(const ActivationBatch& x, std::size_t from, std::size_t count) {
  const std::size_t per = x.channels() * x.plane_size();
  const auto d = x.values().data().subspan(from * per, count * per);
  return ActivationBatch(count, x.channels(), x.height(), x.width(), {d.begin(), d.end()});
}

}  // namespace

TEST(NormMode, ParseAndPrint) {
  for (auto m : {NormMode::none, NormMode::convnorm, NormMode::convnorm_affine})
    EXPECT_EQ(parse_norm_mode(to_string(m)), m);
  EXPECT_THROW(parse_norm_mode("batchnorm"), ArgumentError);
}

TEST(ToyConvNet, InitShapesAndBounds) {
  const auto net = ToyConvNet::init(NormMode::convnorm_affine, 3);
  EXPECT_EQ(net.conv1.c_out(), 8u);
  EXPECT_EQ(net.conv1.c_in(), 1u);
  EXPECT_EQ(net.conv2.c_in(), 8u);
  EXPECT_EQ(net.affine1.kernels.size(), 8u);
  EXPECT_EQ(net.head_weights.size(), 32u);
  const double b1 = std::sqrt(6.0 / (9.0 + 72.0));
  for (double w : net.conv1.weights().data()) EXPECT_LE(std::abs(w), b1);
  const double bh = std::sqrt(6.0 / 12.0);
  for (double w : net.head_weights) EXPECT_LE(std::abs(w), bh);
  for (double b : net.head_bias) EXPECT_EQ(b, 0.0);
  EXPECT_TRUE(ToyConvNet::init(NormMode::convnorm, 3).affine1.kernels.empty());
  EXPECT_EQ(net.parameter_count(), 72u + 576u + 72u + 72u + 32u + 4u);
}

TEST(ToyConvNet, ParameterRoundTrip) {
  const auto net = ToyConvNet::init(NormMode::convnorm_affine, 4);
  const auto p = net.parameters();
  EXPECT_EQ(net.with_parameters(p).parameters(), p);
  EXPECT_THROW(net.with_parameters(std::vector<double>(3)), ArgumentError);
}

TEST(Forward, ZeroWeightsGiveUniformSoftmax) {
  auto net = ToyConvNet::init(NormMode::none, 1);
  net = net.with_parameters(std::vector<double>(net.parameter_count(), 0.0));
  const auto task = small_task(1);
  const auto f = forward(net, task.train_x);
  for (double l : f.logits) EXPECT_EQ(l, 0.0);
  EXPECT_NEAR(cross_entropy(f.logits, task.train_y, 4), std::log(4.0), 1e-15);
}

TEST(Forward, DeltaKernelsMakeConvNormTransparent) {
  auto plain = ToyConvNet::init(NormMode::none, 2);
  plain.conv1 = deltas(8, 1, 3);
  plain.conv2 = deltas(8, 8, 3);
  auto normed = plain;
  normed.mode = NormMode::convnorm;
  const auto task = small_task(2);
  const auto a = forward(plain, task.train_x), b = forward(normed, task.train_x);
  EXPECT_LT(oracle::max_abs(a.logits, b.logits), 1e-12);
}

TEST(Forward, BatchIndependent) {
  const auto net = ToyConvNet::init(NormMode::convnorm_affine, 5);
  const auto task = small_task(5);
  const auto all = forward(net, task.train_x);
  for (std::size_t s : {0, 3, 7}) {
    const auto one = forward(net, slice(task.train_x, s, 1));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(one.logits[c], all.logits[s * 4 + c], 1e-13);
  }
}

TEST(Forward, SpectraAreRecomputedDeterministically) {
  const auto net = ToyConvNet::init(NormMode::convnorm, 6);
  const auto task = small_task(6);
  const auto a = forward(net, task.train_x), b = forward(net, task.train_x);
  EXPECT_EQ(a.logits, b.logits);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(a.spectra.layer2.channels[k].values, b.spectra.layer2.channels[k].values);
}

TEST(Forward, KernelScaleNeutral) {
  auto net = ToyConvNet::init(NormMode::convnorm, 7);
  net.epsilon = 0.0;
  auto scaled = net;
  scaled.conv1 = net.conv1.scaled(3.5);
  scaled.conv2 = net.conv2.scaled(0.2);
  const auto task = small_task(7);
  EXPECT_LT(oracle::max_abs(forward(net, task.train_x).logits, forward(scaled, task.train_x).logits), 1e-12);
}

TEST(Forward, RejectsShapeMismatch) {
  const auto net = ToyConvNet::init(NormMode::none, 1);
  EXPECT_THROW(forward(net, ActivationBatch(1, 2, 8, 8, std::vector<double>(128, 0.0))), ArgumentError);
}

TEST(Metrics, CrossEntropyAndTies) {
  const std::vector<double> logits{0, 0, 0, 0, 1, 3, 3, 2};
  const std::vector<int> labels{0, 2};
  // Row 0 ties everywhere: argmax is class 0. Row 1 ties between 1 and 2: argmax is 1.
  EXPECT_DOUBLE_EQ(accuracy(logits, labels, 4), 0.5);
  const double row1 = -3.0 + std::log(std::exp(1.0) + 2 * std::exp(3.0) + std::exp(2.0));
  EXPECT_NEAR(cross_entropy(logits, labels, 4), 0.5 * (std::log(4.0) + row1), 1e-15);
}

TEST(Backward, GradcheckAllModes) {
  for (auto mode : {NormMode::none, NormMode::convnorm, NormMode::convnorm_affine}) {
    const auto net = ToyConvNet::init(mode, 11);
    const auto task = small_task(11, 4);
    const auto r = gradcheck_detailed(net, task.train_x, task.train_y, 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-5) << to_string(mode);
    EXPECT_GE(r.checked, 684u);
  }
}

TEST(Backward, DuplicatedBatchSameGradient) {
  const auto net = ToyConvNet::init(NormMode::convnorm_affine, 12);
  const auto task = small_task(12, 4);
  std::vector<double> twice(task.train_x.values().data().begin(), task.train_x.values().data().end());
  twice.insert(twice.end(), twice.begin(), twice.end());
  std::vector<int> labels = task.train_y;
  labels.insert(labels.end(), task.train_y.begin(), task.train_y.end());
  const ActivationBatch x2(8, 1, 8, 8, twice);
  const auto g1 = backward(net, forward(net, task.train_x), task.train_y);
  const auto g2 = backward(net, forward(net, x2), labels);
  EXPECT_LT(oracle::max_abs(g1, g2), 1e-14);
}

TEST(Backward, ConfidentCorrectLogitsGiveVanishingGradient) {
  auto net = ToyConvNet::init(NormMode::none, 13);
  const auto task = small_task(13, 4);
  const std::vector<int> labels(4, 0);
  std::fill(net.head_weights.begin(), net.head_weights.end(), 0.0);
  net.head_bias = {0, 0, 0, 0};
  double uniform = 0;
  for (double x : backward(net, forward(net, task.train_x), labels)) uniform = std::max(uniform, std::abs(x));
  EXPECT_GT(uniform, 0.1);
  net.head_bias = {60, 0, 0, 0};  // softmax saturates on the correct class
  for (double x : backward(net, forward(net, task.train_x), labels)) EXPECT_LT(std::abs(x), 1e-20);
}

TEST(Backward, ConvNormChangesConvGradients) {
  // Delta kernels nudged in a non-delta direction, so the frozen spectrum is not flat.
  auto plain = ToyConvNet::init(NormMode::none, 14);
  auto nudge = [](const KernelStack& d, unsigned seed) {
    auto w = oracle::gaussian(d.weights().size(), seed, 0.1);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += d.weights()[i];
    return KernelStack(d.c_out(), d.c_in(), d.k1(), d.k2(), w);
  };
  plain.conv1 = nudge(deltas(8, 1, 3), 1);
  plain.conv2 = nudge(deltas(8, 8, 3), 2);
  auto normed = plain;
  normed.mode = NormMode::convnorm;
  const auto task = small_task(14, 4);
  const auto gp = backward(plain, forward(plain, task.train_x), task.train_y);
  const auto gn = backward(normed, forward(normed, task.train_x), task.train_y);
  double diff = 0;
  for (std::size_t i = 0; i < 72 + 576; ++i) diff = std::max(diff, std::abs(gp[i] - gn[i]));
  EXPECT_GT(diff, 1e-6);
  EXPECT_LT(gradcheck_detailed(normed, task.train_x, task.train_y, 1e-5).max_relative_error, 1e-5);
}

TEST(SyntheticTask, DeterministicAndBalanced) {
  const auto a = generate_synthetic_task(), b = generate_synthetic_task();
  EXPECT_EQ(a.train_x, b.train_x);
  EXPECT_EQ(a.test_y, b.test_y);
  std::vector<int> counts(4, 0);
  for (int y : a.train_y) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) EXPECT_EQ(c, 64);
  EXPECT_EQ(a.train_x.height(), 16u);
  EXPECT_EQ(a.test_x.batch(), 128u);
  EXPECT_NE(generate_synthetic_task({.seed = 1}).train_x, a.train_x);
}

TEST(SyntheticTask, NoiseFreeSamplesAreTemplates) {
  TaskConfig c;
  c.noise = 0.0;
  const auto t = generate_synthetic_task(c);
  for (std::size_t s = 0; s < 8; ++s) {
    const auto p = t.train_x.plane(s, 0);
    const auto& tpl = t.templates[static_cast<std::size_t>(t.train_y[s])];
    EXPECT_TRUE(std::equal(p.begin(), p.end(), tpl.data().begin()));
  }
  for (const auto& tpl : t.templates) {
    double ss = 0;
    for (double x : tpl.data()) ss += x * x;
    EXPECT_NEAR(ss / static_cast<double>(tpl.size()), 1.0, 1e-12);
  }
  EXPECT_THROW(generate_synthetic_task({.classes = 1}), ArgumentError);
}

TEST(Train, ZeroLearningRateKeepsLossConstant) {
  auto net = ToyConvNet::init(NormMode::convnorm, 15);
  const auto task = small_task(15, 16);
  TrainConfig cfg;
  cfg.mode = NormMode::convnorm;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  const auto before = net.parameters();
  const auto trace = train(net, task, cfg);
  ASSERT_EQ(trace.iterations.size(), 2u);
  EXPECT_EQ(trace.iterations[0].loss, trace.iterations[1].loss);
  EXPECT_EQ(net.parameters(), before);
}

TEST(Train, DeterministicTraces) {
  const auto task = small_task(16, 32);
  TrainConfig cfg;
  cfg.mode = NormMode::convnorm_affine;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  auto n1 = ToyConvNet::init(cfg.mode, 16), n2 = ToyConvNet::init(cfg.mode, 16);
  const auto t1 = train(n1, task, cfg), t2 = train(n2, task, cfg);
  EXPECT_EQ(trace_to_csv(t1), trace_to_csv(t2));
  EXPECT_EQ(trace_header_json(t1), trace_header_json(t2));
  EXPECT_EQ(t1.iterations.size(), 12u);
  EXPECT_EQ(t1.epochs.size(), 3u);
}

TEST(Train, ModeMismatchRejected) {
  auto net = ToyConvNet::init(NormMode::none, 1);
  TrainConfig cfg;
  cfg.mode = NormMode::convnorm;
  EXPECT_THROW(train(net, small_task(1), cfg), ArgumentError);
}

TEST(Train, DivergenceHaltsCleanly) {
  auto net = ToyConvNet::init(NormMode::none, 17);
  const auto task = small_task(17, 16);
  TrainConfig cfg;
  cfg.learning_rate = 1e200;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  const auto trace = train(net, task, cfg);
  EXPECT_TRUE(trace.diverged);
  EXPECT_LT(trace.iterations.size(), 10u);
}

TEST(TrainTrace, CsvFormat) {
  TrainTrace t;
  t.iterations = {{1, 0.1, 0.25}, {2, 1.0 / 3.0, 1.0}};
  std::istringstream in(trace_to_csv(t));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iteration,loss,train_acc");
  std::getline(in, line);
  EXPECT_EQ(line, "1,0.10000000000000001,0.25");
  std::getline(in, line);
  EXPECT_EQ(line, "2,0.33333333333333331,1");
}

TEST(TrainTrace, IterationsToAccuracyUsesEpochWindow) {
  TrainTrace t;
  t.iterations_per_epoch = 2;
  const double acc[] = {1.0, 0.5, 0.9, 0.9, 1.0};
  for (std::size_t i = 0; i < 5; ++i) t.iterations.push_back({i + 1, 0.0, acc[i]});
  EXPECT_EQ(t.iterations_to_accuracy(0.9), 4u);  // windows: .75, .7, .9
  EXPECT_EQ(t.iterations_to_accuracy(0.95), 5u);
  EXPECT_FALSE(t.iterations_to_accuracy(0.99).has_value());
}

TEST(TrainTrace, HeaderJson) {
  TrainTrace t;
  t.config.mode = NormMode::convnorm;
  t.iterations_per_epoch = 1;
  t.iterations = {{1, 0.5, 1.0}};
  t.epochs = {{1, 0.75}};
  const auto j = nlohmann::json::parse(trace_header_json(t));
  EXPECT_EQ(j["mode"], "convnorm");
  EXPECT_EQ(j["learning_rate"], 0.1);
  EXPECT_EQ(j["epsilon"], 1e-12);
  EXPECT_EQ(j["iterations_to_90"], 1);
  EXPECT_EQ(j["test_accuracy"][0]["test_acc"], 0.75);
}
