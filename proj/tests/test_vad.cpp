#include <cmath>
#include <vector>

#include "doctest.h"
#include "srst/audio.hpp"
#include "srst/errors.hpp"
#include "srst/rng.hpp"
#include "srst/vad.hpp"

using namespace srst;

namespace {

const double kPi = std::acos(-1.0);

// sine whose sampled RMS is exactly amp/sqrt(2): 1 kHz at 16 kHz covers whole periods
std::vector<double> tone(double seconds, double amp) {
  auto n = size_t(std::lround(seconds * 16000));
  std::vector<double> s(n);
  for (size_t i = 0; i < n; ++i) s[i] = amp * std::sin(2.0 * kPi * 1000.0 * double(i) / 16000.0);
  return s;
}

double amp_for_dbfs(double db) { return std::pow(10.0, db / 20.0) * std::sqrt(2.0); }

void append(std::vector<double>& dst, const std::vector<double>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

double coverage(const std::vector<Segment>& segs) {
  double c = 0.0;
  for (const auto& s : segs) c += s.end_s - s.start_s;
  return c;
}

}  // namespace

TEST_CASE("frame decisions follow the energy threshold table") {
  VadConfig cfg{20, 0, 15};
  std::vector<double> zero(320, 0.0);
  std::vector<double> loud = tone(0.02, 1.0);
  std::vector<double> mid = tone(0.02, amp_for_dbfs(-42.0));
  REQUIRE(mid.size() == 320);
  for (int agg = 0; agg <= 3; ++agg) {
    cfg.aggressiveness = agg;
    CHECK(!frame_decision(zero, cfg));
    CHECK(frame_decision(loud, cfg));
    CHECK(frame_decision(mid, cfg) == (agg <= 1));  // -42 dBFS sits between -45 and -40
  }

  cfg.aggressiveness = 0;
  CHECK_THROWS_AS(frame_decision(std::vector<double>(100, 0.0), cfg), UsageError);
  cfg.frame_ms = 25;
  CHECK_THROWS_AS(frame_decision(zero, cfg), UsageError);
  cfg.frame_ms = 20;
  cfg.aggressiveness = 4;
  CHECK_THROWS_AS(frame_decision(zero, cfg), UsageError);
  cfg.aggressiveness = 0;
  cfg.hangover_frames = -1;
  CHECK_THROWS_AS(frame_decision(zero, cfg), UsageError);
}

TEST_CASE("segment_stream finds runs and respects silence") {
  VadConfig cfg{20, 2, 10};

  AudioClip silent{std::vector<double>(16000, 0.0), 16000};
  CHECK(segment_stream(silent, cfg).empty());

  AudioClip three{tone(3.0, 0.5), 16000};
  auto segs = segment_stream(three, cfg);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].start_s == 0.0);
  CHECK(std::abs(segs[0].end_s - 3.0) <= 0.02);

  std::vector<double> s;
  append(s, tone(1.0, 0.5));
  append(s, std::vector<double>(16000, 0.0));
  append(s, tone(1.0, 0.5));
  auto two = segment_stream({s, 16000}, cfg);  // hangover 200 ms < 1 s gap
  REQUIRE(two.size() == 2);
  CHECK(std::abs(two[0].start_s - 0.0) <= 0.02);
  CHECK(std::abs(two[0].end_s - 1.0) <= 0.02);
  CHECK(std::abs(two[1].start_s - 2.0) <= 0.02);
  CHECK(std::abs(two[1].end_s - 3.0) <= 0.02);
}

TEST_CASE("hangover bridges gaps up to and including its frame budget") {
  std::vector<double> s;
  append(s, tone(1.0, 0.5));
  append(s, std::vector<double>(1600, 0.0));  // 100 ms gap = 5 frames of 20 ms
  append(s, tone(1.0, 0.5));
  AudioClip clip{s, 16000};

  VadConfig bridge{20, 2, 5};
  CHECK(segment_stream(clip, bridge).size() == 1);
  VadConfig split{20, 2, 4};
  CHECK(segment_stream(clip, split).size() == 2);
  VadConfig none{20, 2, 0};
  CHECK(segment_stream(clip, none).size() == 2);
}

TEST_CASE("segments are sorted, disjoint, frame-aligned, and shrink with aggressiveness") {
  Rng rng(77);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<double> s;
    int events = 3 + int(rng.uniform_int(4));
    for (int e = 0; e < events; ++e) {
      double level = -55.0 + 25.0 * rng.uniform_real(0.0, 1.0);
      append(s, tone(0.1 + 0.4 * rng.uniform_real(0.0, 1.0), amp_for_dbfs(level)));
      append(s, std::vector<double>(size_t(rng.uniform_int(8000)), 0.0));
    }
    AudioClip clip{s, 16000};
    double dur = double(s.size()) / 16000.0;

    double prev_cov = 1e18;
    for (int agg = 0; agg <= 3; ++agg) {
      VadConfig cfg{20, agg, 7};
      auto segs = segment_stream(clip, cfg);
      for (size_t i = 0; i < segs.size(); ++i) {
        CHECK(segs[i].start_s < segs[i].end_s);
        CHECK(segs[i].start_s >= 0.0);
        CHECK(segs[i].end_s <= dur + 1e-9);
        // frame grid: 20 ms frames => boundaries are multiples of 0.02 s
        CHECK(std::abs(segs[i].start_s * 50.0 - std::round(segs[i].start_s * 50.0)) < 1e-9);
        CHECK(std::abs(segs[i].end_s * 50.0 - std::round(segs[i].end_s * 50.0)) < 1e-9);
        if (i > 0) CHECK(segs[i].start_s >= segs[i - 1].end_s);
      }
      double cov = coverage(segs);
      CHECK(cov <= prev_cov + 1e-9);
      prev_cov = cov;
    }
  }
}

TEST_CASE("segmentation reports compute the table statistics") {
  auto none = report({}, 10.0);
  CHECK(none.pct_filtered_audio == 100.0);
  CHECK(none.num_segments == 0);
  CHECK(!none.max_len_s.has_value());
  CHECK(!none.min_len_s.has_value());

  auto full = report({{0.0, 10.0}}, 10.0);
  CHECK(full.pct_filtered_audio == 0.0);
  CHECK(full.num_segments == 1);
  CHECK(full.max_len_s == 10.0);
  CHECK(full.min_len_s == 10.0);

  auto two = report({{0.0, 2.0}, {5.0, 6.0}}, 10.0);
  CHECK(two.pct_filtered_audio == doctest::Approx(70.0).epsilon(1e-12));
  CHECK(two.num_segments == 2);
  CHECK(two.max_len_s == 2.0);
  CHECK(two.min_len_s == 1.0);

  // pct + 100*coverage_ratio == 100
  Rng rng(5);
  std::vector<Segment> segs;
  double at = 0.0;
  for (int i = 0; i < 6; ++i) {
    double a = at + rng.uniform_real(0.0, 1.0), b = a + rng.uniform_real(0.1, 2.0);
    segs.push_back({a, b});
    at = b;
  }
  double total = at + 1.0;
  auto r = report(segs, total);
  CHECK(std::abs(r.pct_filtered_audio + 100.0 * coverage(segs) / total - 100.0) < 1e-9);

  CHECK_THROWS_AS(report({}, 0.0), UsageError);
  CHECK_THROWS_AS(report({}, -1.0), UsageError);
}

TEST_CASE("sweep discards over-long or over-fragmented configurations") {
  CHECK_THROWS_AS(sweep_and_filter({}, 300, 5), UsageError);

  // one continuous 61 s tone: every config sees a single >60 s segment -> all discarded
  AudioClip long_clip{tone(61.0, 0.5), 16000};
  auto swept = sweep_and_filter({long_clip}, 300, 100);
  REQUIRE(swept.size() == 12);
  for (const auto& e : swept) {
    CHECK(e.stats.max_len_s.value_or(0.0) > 60.0);
    CHECK(!e.retained);
  }

  // two well-separated loud tones, ref count 1: exactly 2 == 2*ref -> retained everywhere
  std::vector<double> s;
  append(s, tone(1.0, 0.5));
  append(s, std::vector<double>(16000, 0.0));
  append(s, tone(1.0, 0.5));
  auto two = sweep_and_filter({AudioClip{s, 16000}}, 300, 1);
  for (const auto& e : two) {
    CHECK(e.stats.num_segments == 2);
    CHECK(e.retained);  // inclusive boundary: exactly twice the reference count
  }

  // three tones, ref count 1: 3 > 2*1 -> discarded everywhere
  append(s, std::vector<double>(16000, 0.0));
  append(s, tone(1.0, 0.5));
  auto three = sweep_and_filter({AudioClip{s, 16000}}, 300, 1);
  for (const auto& e : three) {
    CHECK(e.stats.num_segments == 3);
    CHECK(!e.retained);
  }

  // same three-tone clip against ref count 2: 3 <= 4 -> retained again
  auto relaxed = sweep_and_filter({AudioClip{s, 16000}}, 300, 2);
  for (const auto& e : relaxed) CHECK(e.retained);
}
