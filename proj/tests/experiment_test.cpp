#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <stdexcept>

#include "microseg/experiment.hpp"
#include "support/tiny_config.hpp"

namespace ms = microseg;

namespace {

ms::Dataset small_dataset(std::size_t subjects, std::uint64_t seed = 13) {
  ms::Dataset ds;
  for (auto& [profile, rec] : ms::generate_cohort(subjects, ms::parse_plan("heels=2,knees=2,trunk=1,chair=2"), seed))
    ds.recordings.push_back(std::move(rec));
  return ds;
}

ms::RunConfig quick_config() {
  ms::RunConfig c;
  c.model = ms::testing::tiny_config();
  c.model.ffn_dim = 32;
  c.train.epochs = 1;
  c.train.patch_len = 8;
  c.train.learning_rate = 3e-3;
  return c;
}

ms::SweepCell cell(double ratio, std::uint64_t seed, double sample_f1, double seg_f1) {
  ms::SweepCell c;
  c.mask_ratio = ratio;
  c.seed = seed;
  c.summary.mean_sample_macro_f1 = sample_f1;
  c.summary.mean_segmental_macro_f1 = seg_f1;
  return c;
}

}  // namespace

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (std::size_t jobs : {1u, 2u, 4u, 16u}) {
    std::vector<std::atomic<int>> hits(37);
    ms::parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    for (std::size_t i = 0; i < hits.size(); ++i) EXPECT_EQ(hits[i].load(), 1) << "jobs " << jobs << " i " << i;
  }
  ms::parallel_for(0, 4, [](std::size_t) { FAIL(); });
}

TEST(ParallelFor, RethrowsWorkerError) {
  for (std::size_t jobs : {1u, 3u}) {
    EXPECT_THROW(ms::parallel_for(10, jobs,
                                  [](std::size_t i) {
                                    if (i == 4) throw std::runtime_error("boom");
                                  }),
                 std::runtime_error);
  }
}

TEST(Evaluation, OracleScoresPerfectly) {
  const auto ds = small_dataset(3);
  std::vector<ms::SubjectPrediction> preds;
  for (const auto& r : ds.recordings) preds.push_back(ms::oracle_subject(r));
  const auto s = ms::evaluate_predictions(preds);

  EXPECT_DOUBLE_EQ(s.mean_sample_macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(s.mean_segmental_macro_f1, 1.0);
  ASSERT_EQ(s.subjects.size(), 3u);
  for (std::size_t c = 0; c < ms::kNumActivities; ++c) {
    const bool seen = std::any_of(s.pooled.counts[c].begin(), s.pooled.counts[c].end(),
                                  [](std::size_t n) { return n > 0; });
    if (seen) {
      EXPECT_DOUBLE_EQ(s.pooled.normalized[c][c], 1.0) << "class " << c;
    }
  }
  ASSERT_EQ(s.loa.classes.size(), ms::kNumActivities - 1);
  for (const auto& a : s.loa.classes) {
    EXPECT_EQ(a.mean, 0.0);
    EXPECT_EQ(a.std, 0.0);
    EXPECT_EQ(a.lower, 0.0);
    EXPECT_EQ(a.upper, 0.0);
  }
}

TEST(Evaluation, AllBackgroundPredictionScoresZero) {
  const auto ds = small_dataset(2);
  std::vector<ms::SubjectPrediction> preds;
  for (const auto& r : ds.recordings)
    preds.push_back({r.subject_id, r.labels, ms::LabelSequence(r.labels.size(), 0)});
  const auto s = ms::evaluate_predictions(preds);
  EXPECT_EQ(s.mean_sample_macro_f1, 0.0);
  EXPECT_EQ(s.mean_segmental_macro_f1, 0.0);
  for (const auto& a : s.loa.classes) EXPECT_GT(a.mean, 0.0) << "class " << a.class_id;
}

TEST(Evaluation, JsonHasPerSubjectEntries) {
  const auto ds = small_dataset(2);
  const auto j = ms::to_json(ms::evaluate_predictions({ms::oracle_subject(ds.recordings[0]),
                                                       ms::oracle_subject(ds.recordings[1])}));
  ASSERT_EQ(j.at("subjects").size(), 2u);
  EXPECT_EQ(j.at("subjects")[1].at("subject"), "S02");
  EXPECT_EQ(j.at("pooled_confusion").at("n_classes"), ms::kNumActivities);
}

TEST(Evaluation, SubjectsFollowCheckpointMeta) {
  const auto ds = small_dataset(3);
  EXPECT_EQ(ms::evaluation_subjects(ds, {{"held_out", "S02"}}), std::vector<std::string>{"S02"});
  EXPECT_EQ(ms::evaluation_subjects(ds, {{"held_out", nullptr}}), ds.subject_ids());
  EXPECT_THROW(ms::evaluation_subjects(ds, {{"held_out", "S09"}}), ms::DataError);
}

TEST(Evaluation, CompatibilityChecks) {
  const auto ds = small_dataset(2);
  auto c = ms::testing::tiny_config();
  EXPECT_NO_THROW(ms::check_compatible(ds, c));
  c.n_classes = 4;
  EXPECT_THROW(ms::check_compatible(ds, c), ms::DataError);
  c = ms::testing::tiny_config();
  c.window_len = 1'000'000;
  EXPECT_THROW(ms::check_compatible(ds, c), ms::DataError);
}

TEST(Losocv, OneFoldPerSubjectWithHeldOutExcluded) {
  const auto ds = small_dataset(3);
  const auto folds = ms::train_losocv(ds, quick_config());
  ASSERT_EQ(folds.size(), 3u);
  std::set<std::string> held;
  for (const auto& f : folds) {
    ASSERT_TRUE(f.held_out.has_value());
    held.insert(*f.held_out);
    EXPECT_EQ(f.train_subjects.size(), 2u);
    EXPECT_EQ(std::count(f.train_subjects.begin(), f.train_subjects.end(), *f.held_out), 0);
    EXPECT_FALSE(f.result.steps.empty());
  }
  EXPECT_EQ(held, (std::set<std::string>{"S01", "S02", "S03"}));
}

TEST(Losocv, ResultsDoNotDependOnJobs) {
  const auto ds = small_dataset(3);
  const auto config = quick_config();
  const auto serial = ms::train_losocv(ds, config, 1);
  const auto threaded = ms::train_losocv(ds, config, 3);
  ASSERT_EQ(serial.size(), threaded.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].held_out, threaded[i].held_out);
    EXPECT_EQ(ms::encode_checkpoint(serial[i].model), ms::encode_checkpoint(threaded[i].model)) << "fold " << i;
  }
}

TEST(Losocv, FoldsUseDistinctInitialisation) {
  EXPECT_NE(ms::model_seed(1, 0), ms::model_seed(1, 1));
  EXPECT_NE(ms::model_seed(1, 0), ms::model_seed(2, 0));
}

TEST(Losocv, CellScoresHeldOutSubjects) {
  const auto ds = small_dataset(2);
  const auto c = ms::losocv_cell(ds, quick_config(), 0.4, 5, 2);
  EXPECT_EQ(c.mask_ratio, 0.4);
  EXPECT_EQ(c.seed, 5u);
  ASSERT_EQ(c.summary.subjects.size(), 2u);
  EXPECT_EQ(c.summary.subjects[0].subject, "S01");
  EXPECT_GE(c.summary.mean_sample_macro_f1, 0.0);
  EXPECT_LE(c.summary.mean_sample_macro_f1, 1.0);
}

TEST(Sweep, SummaryAggregatesPerRatio) {
  const auto rows = ms::summarize_sweep(
      {cell(0.8, 1, 0.9, 0.2), cell(0.0, 1, 0.5, 0.1), cell(0.8, 2, 0.7, 0.4), cell(0.8, 3, 0.8, 0.3)});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].mask_ratio, 0.0);
  EXPECT_EQ(rows[0].runs, 1u);
  EXPECT_DOUBLE_EQ(rows[0].mean_sample_macro_f1, 0.5);
  EXPECT_EQ(rows[0].std_sample_macro_f1, 0.0);

  const auto& r = ms::sweep_row(rows, 0.8);
  EXPECT_EQ(r.runs, 3u);
  EXPECT_NEAR(r.mean_sample_macro_f1, 0.8, 1e-12);
  EXPECT_NEAR(r.std_sample_macro_f1, std::sqrt(0.02 / 3.0), 1e-12);
  EXPECT_NEAR(r.mean_segmental_macro_f1, 0.3, 1e-12);
  EXPECT_THROW(ms::sweep_row(rows, 0.5), std::out_of_range);
}

TEST(Sweep, CsvTable) {
  const auto rows = ms::summarize_sweep({cell(0.0, 1, 0.5, 0.25), cell(0.9, 1, 0.75, 0.125)});
  EXPECT_EQ(ms::sweep_table_csv(rows),
            "mask_ratio,runs,mean_sample_macro_f1,std_sample_macro_f1,mean_segmental_macro_f1\n"
            "0,1,0.5,0,0.25\n"
            "0.9,1,0.75,0,0.125\n");
}

TEST(VelocityReport, TrueLabelsFindEveryChairRise) {
  const auto ds = small_dataset(1);
  ms::VelocityRequest req;
  req.use_true_labels = true;
  const auto r = ms::velocity_for_subject(ds.recordings[0], nullptr, req);
  EXPECT_EQ(r.label_source, "true");
  EXPECT_FALSE(r.notice.has_value());
  EXPECT_EQ(r.analysis.repetitions.size(), 4u);
  EXPECT_EQ(r.analysis.trace.size(), ds.recordings[0].length());
  const auto j = ms::to_json(r);
  EXPECT_EQ(j.at("repetitions").size(), 4u);
  EXPECT_TRUE(j.at("notice").is_null());
}

TEST(VelocityReport, NoChairRisesGivesNotice) {
  ms::Rng rng(4);
  const auto profile = ms::random_profile("S01", rng);
  const auto rec = ms::generate_recording(profile, ms::parse_plan("heels=2"), 4);
  ms::VelocityRequest req;
  req.use_true_labels = true;
  const auto r = ms::velocity_for_subject(rec, nullptr, req);
  EXPECT_TRUE(r.analysis.repetitions.empty());
  ASSERT_TRUE(r.notice.has_value());
  EXPECT_NE(r.notice->find("S01"), std::string::npos);
}
