#include <gtest/gtest.h>

#include <filesystem>

#include "fsdrive/metrics.hpp"
#include "fsdrive/zoo.hpp"
#include "support/metric_props.hpp"

using namespace fsdrive;

namespace {

// Sum of the 12 pixels through one linear unit, clamped to +-90.
ModelSpec probe_regressor() {
  return parse_model_spec(
      "model probe\n"
      "input image shape=3,2,2\n"
      "flatten flat in=image\n"
      "linear fc in=flat width=1\n"
      "clamp_scale head in=fc lo=-90 hi=90\n"
      "output head\n");
}

ModelSpec probe_classifier() {
  return parse_model_spec(
      "model probe\n"
      "input image shape=3,2,2\n"
      "flatten flat in=image\n"
      "linear fc in=flat width=3\n"
      "softmax_head head in=fc\n"
      "output head\n");
}

std::vector<FramePair> frames_with_steering(const std::vector<double>& steering) {
  std::vector<FramePair> out;
  for (std::size_t i = 0; i < steering.size(); ++i) {
    FramePair p;
    p.image = Tensor<float>({3, 2, 2}, static_cast<float>(steering[i] / 90.0));
    p.record.steering = steering[i];
    p.log_row = i + 1;
    p.frame_index = i;
    out.push_back(p);
  }
  return out;
}

// Output = steering + offset, up to float rounding of the frame.
Model<double> exact_regressor(double offset) {
  Model<double> m(probe_regressor(), 0);
  m.params("fc").weights.fill(90.0 / 12.0);
  m.params("fc").bias.fill(offset);
  return m;
}

// Always predicts the given class.
Model<double> constant_classifier(int cls) {
  Model<double> m(probe_classifier(), 0);
  m.params("fc").weights.fill(0.0);
  m.params("fc").bias.fill(0.0);
  m.params("fc").bias[static_cast<std::size_t>(cls - 1)] = 5.0;
  return m;
}

}  // namespace

TEST(Confusion, TraceEqualsMeanBatchAccuracyForFullBatches) {
  const auto r = fsdrive::test_support::confusion_identity(500, 3);
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(Confusion, PartialBatchesDiffer) {
  ClassificationTally t;
  t.add_batch(std::vector<int>{1, 1}, std::vector<int>{1, 1});
  t.add_batch(std::vector<int>{1}, std::vector<int>{2});
  EXPECT_DOUBLE_EQ(t.mean_batch_accuracy(), 0.5);
  EXPECT_DOUBLE_EQ(t.confusion.accuracy(), 2.0 / 3.0);
}

TEST(Eval, RegressionExactAndOffByOne) {
  const auto frames = frames_with_steering({-60, -5, 0, 12, 33, 80, -90, 90});
  auto exact = exact_regressor(0.0);
  const auto r = eval_regression(exact, std::span<const FramePair>(frames), 4);
  EXPECT_NEAR(r.mean_l1.at(0), 0.0, 1e-4);
  auto off = exact_regressor(1.0);
  const auto frames_inner = frames_with_steering({-60, -5, 0, 12, 33, 80, -50, 50});
  EXPECT_NEAR(eval_regression(off, std::span<const FramePair>(frames_inner), 4).mean_l1.at(0), 1.0, 1e-4);
}

TEST(Eval, BatchingArithmetic) {
  std::vector<double> s(130, 0.0);
  const auto frames = frames_with_steering(s);
  auto m = constant_classifier(2);
  const auto r = eval_classification(m, std::span<const FramePair>(frames), 64);
  EXPECT_EQ(r.batches, 2u);
  EXPECT_EQ(r.dropped, 2u);
  EXPECT_EQ(r.evaluated, 128u);
  EXPECT_EQ(r.confusion.total(), 128u);
  EXPECT_NE(report_to_text(r).find("dropped\t2"), std::string::npos);
  EXPECT_THROW(eval_classification(m, std::span<const FramePair>(frames).first(10), 64), Error);
}

TEST(Eval, ConstantPredictorOnBalancedSet) {
  std::vector<double> s;
  for (int i = 0; i < 64; ++i) s.push_back(i % 3 == 0 ? 45.0 : i % 3 == 1 ? 0.0 : -45.0);
  s.push_back(45.0);
  s.push_back(0.0);
  const auto frames = frames_with_steering(s);
  auto m = constant_classifier(2);
  const auto r = eval_classification(m, std::span<const FramePair>(frames), 66);
  EXPECT_NEAR(r.accuracy, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(r.confusion.counts[1][1], 22u);
  EXPECT_EQ(r.confusion.counts[0][0] + r.confusion.counts[2][2], 0u);
}

TEST(Eval, PerfectPredictorAndShuffleInvariance) {
  std::vector<double> s;
  Rng rng(2);
  for (int i = 0; i < 48; ++i) s.push_back(rng.uniform(-90, 90));
  auto frames = frames_with_steering(s);
  Model<double> m(probe_classifier(), 0);
  // Three linear scores of the brightness b = s/90 whose argmax is the steering bin.
  auto& w = m.params("fc").weights;
  auto& b = m.params("fc").bias;
  w.fill(0.0);
  for (std::size_t j = 0; j < 12; ++j) {
    w[j] = 90.0 / 12.0;        // left: s - 10
    w[24 + j] = -90.0 / 12.0;  // right: -s - 10
  }
  b[0] = -10.0;
  b[1] = 0.0;
  b[2] = -10.0;
  const auto r = eval_classification(m, std::span<const FramePair>(frames), 16);
  EXPECT_EQ(r.accuracy, 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) EXPECT_EQ(r.confusion.counts[i][j], 0u);
  rng.shuffle(std::span<FramePair>(frames));
  const auto shuffled = eval_classification(m, std::span<const FramePair>(frames), 16);
  EXPECT_EQ(shuffled.confusion.counts, r.confusion.counts);
}

TEST(Eval, RegressionAgreesWithBinsOnDegenerateTargets) {
  const auto frames = frames_with_steering({90, 0, -90, 0, 90, -90, 0, 0});
  auto m = exact_regressor(0.0);
  const auto rr = eval_regression(m, std::span<const FramePair>(frames), 4);
  std::size_t agree = 0;
  auto batch = make_batch<double>(std::span<const FramePair>(frames), std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}, Task::real);
  const auto out = m.forward(batch.inputs, Mode::eval);
  for (std::size_t i = 0; i < frames.size(); ++i) agree += discretize_steering(out[i]) == discretize_steering(frames[i].record.steering);
  EXPECT_EQ(rr.mean_l1.at(0) == 0.0, agree == frames.size());
}

TEST(Export, ActivationTable) {
  const auto ds = synth_track_dataset(130, 16, 3);
  Model<float> m(miniature(make_discrete_model("3CL-2FC"), 16, 16), 4);
  const auto text = export_activations(m, std::span<const FramePair>(ds.pairs), Task::discrete, "", 64);
  EXPECT_EQ(text.rfind("# layer=fc1_relu width=100 rows=128\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 130);
  EXPECT_EQ(text, export_activations(m, std::span<const FramePair>(ds.pairs), Task::discrete, "", 64));
  try {
    export_activations(m, std::span<const FramePair>(ds.pairs), Task::discrete, "nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("fc1_relu"), std::string::npos);
  }
}

TEST(Export, FilterImages) {
  const double identity[9] = {0, 0, 0, 0, 1, 0, 0, 0, 0};
  const auto img = filter_to_image(identity, 3);
  EXPECT_EQ(img.width, 3u);
  EXPECT_EQ(std::count(img.pixels.begin(), img.pixels.end(), 255), 1);
  EXPECT_EQ(img.at(1, 1), 255);
  const float flat[4] = {0.3f, 0.3f, 0.3f, 0.3f};
  for (auto v : filter_to_image(flat, 2).pixels) EXPECT_EQ(v, 128);

  const auto dir = std::filesystem::temp_directory_path() / "fsdrive_test_filters";
  std::filesystem::remove_all(dir);
  Model<float> m(make_discrete_model("3CL-2FC"), 1);
  const auto n = export_filters(m, dir);
  EXPECT_EQ(n, 8u * 3 + 16u * 8 + 32u * 16);
  std::size_t conv3 = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) conv3 += e.path().filename().string().rfind("conv3_", 0) == 0;
  EXPECT_EQ(conv3, 32u * 16);
}
