#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "physiofuse/protocol.hpp"

using namespace physiofuse;
namespace fs = std::filesystem;

namespace {

std::vector<SegmentRecord> labeled_segments(std::size_t n) {
  std::vector<SegmentRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = i;
    out[i].arousal = static_cast<int>(i % 2);
    if (i % 3 != 0) out[i].valence = 1;
  }
  return out;
}

ModelConfig micro(Modality m) {
  ModelConfig c = ModelConfig::defaults(m);
  c.kernels = {5, 3, 3};
  c.conv_channels = {4, 4, 8};
  c.hidden_size = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mvp_hidden = 8;
  c.emotion_hidden = 4;
  return c;
}

}  // namespace

TEST_CASE("labeled subset") {
  const auto segs = labeled_segments(30);
  std::vector<std::size_t> ids(30);
  for (std::size_t i = 0; i < 30; ++i) ids[i] = i;
  const auto all = labeled_subset(segs, ids, Target::kValence, 1.0, 1);
  CHECK(all.size() == 20);
  const auto some = labeled_subset(segs, ids, Target::kValence, 0.1, 1);
  CHECK(some.size() == 2);
  CHECK(std::is_sorted(some.begin(), some.end()));
  for (auto id : some) CHECK(segs[id].valence.has_value());
  CHECK(labeled_subset(segs, ids, Target::kValence, 0.1, 1) == some);
  CHECK(labeled_subset(segs, ids, Target::kArousal, 0.15, 1).size() == 5);
  CHECK(labeled_subset(segs, ids, Target::kArousal, 0.001, 1).size() == 1);
}

TEST_CASE("seeds are distinct per fold, modality and target") {
  RunConfig c;
  c.eval.seed = 4;
  std::set<std::uint64_t> seen;
  for (std::size_t fold = 0; fold < 3; ++fold) {
    for (Modality m : {Modality::kEcg, Modality::kEeg}) {
      seen.insert(init_seed(c, fold, m));
      seen.insert(phase_seed(c, Phase::kPretrain, fold, m, std::nullopt));
      for (Target t : {Target::kArousal, Target::kValence}) seen.insert(phase_seed(c, Phase::kFinetune, fold, m, t));
    }
  }
  CHECK(seen.size() == 3 * 2 * 4);
  CHECK(init_seed(c, 1, Modality::kEeg) == init_seed(c, 1, Modality::kEeg));
}

TEST_CASE("fold prefix keeps the error type") {
  try {
    rethrow_with_fold(std::make_exception_ptr(LeakageError("segment 3")), 7);
  } catch (const LeakageError& e) {
    CHECK(std::string(e.what()) == "fold 7: segment 3");
  }
  CHECK_THROWS_AS(rethrow_with_fold(std::make_exception_ptr(NumericError("nan")), 1), NumericError);
  CHECK_THROWS_AS(rethrow_with_fold(std::make_exception_ptr(std::runtime_error("x")), 1), Error);
}

TEST_CASE("small cross-validation run") {
  const auto dir = fs::temp_directory_path() / "physiofuse_test_protocol";
  fs::remove_all(dir);
  SyntheticSpec spec;
  spec.subjects = 2;
  spec.trials_per_subject = 4;
  spec.trial_seconds = 4;
  const auto manifest = generate_synthetic(spec, 3, dir);

  RunConfig c;
  c.preprocess.segment_seconds = 1.0;
  c.ecg = micro(Modality::kEcg);
  c.eeg = micro(Modality::kEeg);
  c.fusion.hidden = {4, 2};
  for (TrainConfig* t : {&c.pretrain, &c.finetune, &c.fuse}) {
    t->epochs = 2;
    t->batch_size = 8;
  }
  c.pretrain.schedule = WarmupLinearDecay{1e-3, 1, 3};
  c.eval.folds = 4;
  c.eval.seed = 2;
  c.eval.folds_to_run = {0, 2};
  c.precision = 64;

  const auto result = run_cross_validation(manifest, c);
  CHECK(result.report.rows.size() == 2 * 3 * 2 * 2);
  CHECK(result.leakage_checks > 0);
  std::set<std::size_t> tested;
  for (std::size_t fold : {0u, 2u}) {
    for (auto id : result.report.test_sets.at(fold)) CHECK(tested.insert(id).second);
  }
  for (const auto& row : result.report.rows) {
    CHECK(row.value >= 0.0);
    CHECK(row.value <= 1.0);
  }
  const auto again = run_cross_validation(manifest, c);
  REQUIRE(again.report.rows.size() == result.report.rows.size());
  for (std::size_t i = 0; i < again.report.rows.size(); ++i) CHECK(again.report.rows[i].value == result.report.rows[i].value);
}
