#include <gtest/gtest.h>

#include "fsdrive/render.hpp"
#include "support/render_props.hpp"

using namespace fsdrive;
namespace ts = fsdrive::test_support;

TEST(Overlay, AnchorsAndDeterminism) {
  const auto r = ts::renderer_anchors(std::filesystem::temp_directory_path() / "fsdrive_test_render");
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(Overlay, NeedleAngleIsLinear) {
  const auto frame = ts::test_frame(2);
  for (double s : {-60.0, -30.0, 30.0, 45.0, 60.0}) {
    TelemetryRecord rec;
    rec.steering = s;
    const auto px = ts::dial_pixels(render_overlay(frame, rec), kActualColor);
    // The pixel farthest from the pivot sets the needle direction.
    double best = -1, angle = 0;
    for (const auto& [x, y] : px) {
      const double dx = x - OverlayGeometry::dial_x, dy = OverlayGeometry::dial_y - y;
      if (dx * dx + dy * dy > best) {
        best = dx * dx + dy * dy;
        angle = std::atan2(-dx, dy) * 180.0 / 3.14159265358979323846;
      }
    }
    EXPECT_NEAR(angle, s, 1.5) << s;
  }
}

TEST(Overlay, PredictionsUseSecondColour) {
  const auto frame = ts::test_frame(3);
  TelemetryRecord rec;
  rec.brake = 64;
  const auto img = render_overlay(frame, rec, Prediction{30.0, 200.0, std::nullopt});
  const int y = OverlayGeometry::bar_rows[0] + OverlayGeometry::actual_height + 2;
  int amber = 0;
  for (int x = 0; x < 256; ++x) amber += img.at(x, y, 0) == 255 && img.at(x, y, 1) == 191 && img.at(x, y, 2) == 0;
  EXPECT_EQ(amber, 100);
  EXPECT_FALSE(ts::dial_pixels(img, kPredictedColor).empty());
  EXPECT_EQ(ts::bar_extent(img, 0), 32);
}

TEST(Overlay, RejectsWrongFrameAndPredictionCount) {
  EXPECT_THROW(render_overlay(Image(64, 64, 3), TelemetryRecord{}), Error);
  const auto ds = synth_track_dataset(10, 16, 1);
  std::vector<Prediction> two(2);
  EXPECT_THROW(render_sequence(std::span<const FramePair>(ds.pairs), two, std::filesystem::temp_directory_path() / "fsdrive_bad"), Error);
  EXPECT_EQ(overlay_frame(ds.pairs[0].image).width, 256u);
}

TEST(Overlay, UnwritableDirectoryRejected) {
  const auto ds = synth_track_dataset(10, 16, 1);
  const auto file = std::filesystem::temp_directory_path() / "fsdrive_not_a_dir";
  write_text_file(file, "x");
  EXPECT_THROW(render_sequence(std::span<const FramePair>(ds.pairs), {}, file), Error);
}
