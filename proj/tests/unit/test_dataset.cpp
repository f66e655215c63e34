#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "physiofuse/dataset.hpp"

using namespace physiofuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("physiofuse_test_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.subjects = 2;
  s.trials_per_subject = 4;
  s.trial_seconds = 4;
  s.sample_rate = 256;
  return s;
}

}  // namespace

TEST_CASE("folds partition the segments") {
  for (std::size_t n : {10u, 57u, 400u}) {
    const auto plan = make_folds(n, 10, 3);
    REQUIRE(plan.folds.size() == 10);
    std::vector<int> seen(n, 0);
    std::size_t smallest = n, largest = 0;
    for (const auto& f : plan.folds) {
      for (auto id : f.test) ++seen[id];
      smallest = std::min(smallest, f.test.size());
      largest = std::max(largest, f.test.size());
      std::set<std::size_t> all(f.train.begin(), f.train.end());
      all.insert(f.validation.begin(), f.validation.end());
      CHECK(all.size() == f.train.size() + f.validation.size());
      for (auto id : f.test) CHECK(all.count(id) == 0);
      CHECK(all.size() + f.test.size() == n);
    }
    CHECK(largest - smallest <= 1);
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  }
  CHECK(make_folds(100, 10, 1).folds[0].test == make_folds(100, 10, 1).folds[0].test);
  CHECK(make_folds(100, 10, 1).folds[0].test != make_folds(100, 10, 2).folds[0].test);
}

TEST_CASE("mask plans") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const auto plan = sample_mask(1280, 10, 0.15, rng);
    CHECK(plan.masked_count() == 190);
    CHECK(plan.span_starts.size() == 19);
    std::vector<int> cover(1280, 0);
    for (auto s : plan.span_starts)
      for (std::size_t i = 0; i < 10; ++i) ++cover[(s + i) % 1280];
    for (std::size_t t = 0; t < 1280; ++t) {
      CHECK(cover[t] <= 1);
      CHECK((cover[t] == 1) == plan.mask[t]);
    }
  }
  std::vector<double> buf(3 * 40, 1.0);
  const auto plan = sample_mask(40, 4, 0.2, rng);
  apply_mask(plan, buf, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 40; ++t) CHECK((buf[c * 40 + t] == 0.0) == plan.mask[t]);
}

TEST_CASE("every position is masked with the same probability") {
  Rng rng(6);
  std::vector<int> hits(50, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto plan = sample_mask(50, 5, 0.3, rng);
    for (std::size_t t = 0; t < 50; ++t) hits[t] += plan.mask[t];
  }
  for (int h : hits) CHECK(static_cast<double>(h) / n == doctest::Approx(0.3).epsilon(0.06));
}

TEST_CASE("labels binarize at the mean rating") {
  Manifest m;
  for (int i = 0; i < 4; ++i) {
    ManifestEntry e;
    e.subject_id = "s1";
    e.trial_id = "t" + std::to_string(i);
    e.arousal = 1.0 + 2.0 * i;  // 1 3 5 7, mean 4
    if (i != 2) e.valence = 5.0;
    m.entries.push_back(e);
  }
  const auto labels = binarize_labels(m);
  CHECK(labels.arousal_threshold == doctest::Approx(4.0));
  CHECK(labels.label("s1", "t0", Target::kArousal) == 0);
  CHECK(labels.label("s1", "t3", Target::kArousal) == 1);
  // A rating equal to the threshold is low.
  CHECK(labels.label("s1", "t0", Target::kValence) == 0);
  CHECK_FALSE(labels.label("s1", "t2", Target::kValence).has_value());
}

TEST_CASE("synthetic data round-trips through the manifest") {
  const auto dir = scratch_dir("roundtrip");
  const auto m = generate_synthetic(small_spec(), 4, dir);
  CHECK(m.entries.size() == 8);
  const auto loaded = load_manifest(dir / "manifest.json");
  REQUIRE(loaded.entries.size() == 8);
  const auto ecg = load_entry_signal(loaded.entries[3], Modality::kEcg);
  const auto eeg = load_entry_signal(loaded.entries[3], Modality::kEeg);
  CHECK(ecg.channels == 1);
  CHECK(eeg.channels == 10);
  CHECK(ecg.length() == 1024);
  const auto labels = binarize_labels(loaded);
  std::size_t high = 0;
  for (const auto& e : loaded.entries) high += *labels.label(e.subject_id, e.trial_id, Target::kArousal);
  CHECK(high == 4);

  // Same seed, same bytes.
  const auto again = scratch_dir("roundtrip2");
  generate_synthetic(small_spec(), 4, again);
  const auto a = read_signal(m.entries[5].signals.at(Modality::kEeg), Modality::kEeg);
  const auto b = read_signal(again / "signals" / m.entries[5].signals.at(Modality::kEeg).filename(), Modality::kEeg);
  CHECK(a.samples == b.samples);
}

TEST_CASE("truncated signal files are rejected") {
  const auto dir = scratch_dir("truncated");
  generate_synthetic(small_spec(), 1, dir);
  const auto victim = dir / "signals" / "s01_t01_ecg.f32";
  fs::resize_file(victim, fs::file_size(victim) - 8);
  CHECK_THROWS_AS(load_manifest(dir / "manifest.json"), LoadError);
}

TEST_CASE("prepared segments and fold-local normalization") {
  const auto dir = scratch_dir("prepare");
  const auto m = generate_synthetic(small_spec(), 2, dir);
  PreprocessConfig pc;
  pc.segment_seconds = 1.0;
  const auto data = prepare_dataset(m, pc);
  CHECK(data.segment_length == 128);
  CHECK(data.segments.size() == 8 * 4);
  for (std::size_t i = 0; i < data.segments.size(); ++i) CHECK(data.segments[i].id == i);

  // Statistics come only from the reference: changing a non-reference segment
  // leaves every other normalized segment untouched.
  std::vector<std::size_t> reference;
  for (std::size_t i = 0; i < data.segments.size(); i += 2) reference.push_back(i);
  const auto base = normalize_segments(data, reference);
  auto perturbed = data;
  for (auto& x : perturbed.segments[1].signals.at(Modality::kEcg)) x *= 50.0;
  const auto again = normalize_segments(perturbed, reference);
  for (std::size_t i = 0; i < data.segments.size(); ++i) {
    if (i == 1) continue;
    CHECK(again[i].signals.at(Modality::kEcg) == base[i].signals.at(Modality::kEcg));
  }
  // Reference segments of one subject are standardized.
  double s = 0, sq = 0;
  std::size_t n = 0;
  for (auto id : reference) {
    if (base[id].subject_id != "s01") continue;
    for (double x : base[id].signals.at(Modality::kEcg)) {
      s += x;
      sq += x * x;
      ++n;
    }
  }
  CHECK(s / n == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-9));
}
