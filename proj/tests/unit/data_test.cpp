#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedsim/data.hpp"

using namespace fedsim;

namespace {

std::vector<ClipRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in, "test");
}

std::vector<ClipRecord> clips_with_sizes(const std::vector<std::size_t>& sizes) {
  std::vector<ClipRecord> out;
  for (std::size_t u = 0; u < sizes.size(); ++u)
    for (std::size_t i = 0; i < sizes[u]; ++i)
      out.push_back({"u" + std::to_string(u) + "_" + std::to_string(i), "user" + std::to_string(u), {"x"},
                     Split::train, std::nullopt});
  return out;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] - b[i]);
  return tv / 2.0;
}

}  // namespace

TEST(IngestMetadata, FixtureFile) {
  const auto clips = ingest_metadata(FEDSIM_TEST_DATA "/manifest3.csv");
  ASSERT_EQ(clips.size(), 3u);
  EXPECT_EQ(clips[0].clip_id, "101");
  EXPECT_EQ(clips[0].uploader, "alice");
  EXPECT_EQ(clips[0].labels, (std::set<std::string>{"Bark", "Dog"}));
  EXPECT_EQ(clips[0].split, Split::train);
  EXPECT_DOUBLE_EQ(*clips[0].duration_s, 3.5);
  EXPECT_EQ(clips[1].split, Split::val);
  EXPECT_FALSE(clips[1].duration_s.has_value());
  EXPECT_EQ(clips[2].labels, (std::set<std::string>{"Speech", "Walk_and_footsteps"}));
}

TEST(IngestMetadata, ColumnsInAnyOrderAndOptionalDuration) {
  const auto clips = parse("split,labels,uploader,clip_id\ntrain,a|b,u1,c1\n");
  ASSERT_EQ(clips.size(), 1u);
  EXPECT_EQ(clips[0].clip_id, "c1");
  EXPECT_EQ(clips[0].labels.size(), 2u);
}

TEST(IngestMetadata, EmptyLabelsNamesTheLine) {
  try {
    parse("clip_id,uploader,labels,split\nc1,u,a,train\nc2,u,,train\n");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("empty label"), std::string::npos) << e.what();
  }
}

TEST(IngestMetadata, DuplicateIdAndMissingColumn) {
  EXPECT_THROW(parse("clip_id,uploader,labels,split\nc1,u,a,train\nc1,v,b,train\n"), ValidationError);
  try {
    parse("clip_id,labels,split\nc1,a,train\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("uploader"), std::string::npos);
  }
  EXPECT_THROW(parse("clip_id,uploader,labels,split\nc1,u,a,holdout\n"), ValidationError);
  EXPECT_THROW(parse("clip_id,uploader,labels,split,duration_s\nc1,u,a,train,-2\n"), ValidationError);
}

TEST(IngestMetadata, WriteThenParseRoundTrip) {
  const auto clips = ingest_metadata(FEDSIM_TEST_DATA "/manifest3.csv");
  std::ostringstream out;
  write_manifest(out, clips);
  const auto again = parse(out.str());
  ASSERT_EQ(again.size(), clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    EXPECT_EQ(again[i].clip_id, clips[i].clip_id);
    EXPECT_EQ(again[i].labels, clips[i].labels);
    EXPECT_EQ(again[i].duration_s, clips[i].duration_s);
  }
}

TEST(PartitionByUploader, OneClientPerUploader) {
  auto clips = clips_with_sizes({3, 1, 4});
  clips.push_back({"v1", "user9", {"x"}, Split::val, std::nullopt});
  const auto parts = partition_by_uploader(clips, 1);
  ASSERT_EQ(parts.size(), 3u);
  std::size_t total = 0;
  for (const auto& p : parts) total += p.n();
  EXPECT_EQ(total, 8u);
  EXPECT_TRUE(std::is_sorted(parts.begin(), parts.end(),
                             [](const auto& a, const auto& b) { return a.client_id < b.client_id; }));
}

TEST(PartitionByUploader, Threshold) {
  const auto parts = partition_by_uploader(clips_with_sizes({5, 100, 120}), 100);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].n(), 100u);
  EXPECT_EQ(parts[1].n(), 120u);
}

TEST(PartitionByUploader, LosslessAndMonotone) {
  std::srand(1);
  std::vector<std::size_t> sizes;
  for (int i = 0; i < 40; ++i) sizes.push_back(1 + static_cast<std::size_t>(std::rand() % 150));
  const auto clips = clips_with_sizes(sizes);
  const auto all = partition_by_uploader(clips, 1);
  std::vector<int> seen(clips.size(), 0);
  for (const auto& p : all)
    for (auto i : p.clips) ++seen[i];
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));

  std::size_t prev_clients = all.size(), prev_clips = clips.size();
  for (std::size_t t = 2; t <= 160; t += 7) {
    const auto parts = partition_by_uploader(clips, t);
    std::size_t kept = 0;
    for (const auto& p : parts) kept += p.n();
    EXPECT_LE(parts.size(), prev_clients);
    EXPECT_LE(kept, prev_clips);
    prev_clients = parts.size();
    prev_clips = kept;
  }
}

TEST(UploaderHistogram, Buckets) {
  const auto h = uploader_histogram(clips_with_sizes({1, 1, 3, 150}));
  EXPECT_EQ(h.one, 2u);
  EXPECT_EQ(h.two_to_ten, 1u);
  EXPECT_EQ(h.eleven_to_99, 0u);
  EXPECT_EQ(h.hundred_plus, 1u);
  EXPECT_EQ(h.uploaders(), 4u);
  EXPECT_EQ(h.at_most_ten(), 3u);
}

TEST(Vocabulary, SortedUnion) {
  const auto v = vocabulary(ingest_metadata(FEDSIM_TEST_DATA "/manifest3.csv"));
  EXPECT_EQ(v, (std::vector<std::string>{"Bark", "Dog", "Music", "Speech", "Walk_and_footsteps"}));
}

// ---------------------------------------------------------------------------
// synthetic task

TEST(SynthTask, IidLimitMatchesGlobalMix) {
  SynthTaskSpec spec;
  spec.num_clients = 20;
  spec.concentration = 1e6;
  const auto t = synth_federated_task(spec);
  const std::vector<double> global(spec.num_classes, 1.0 / static_cast<double>(spec.num_classes));
  for (const auto& p : t.class_proportions) EXPECT_LT(total_variation(p, global), 0.05);
}

TEST(SynthTask, StrongSkewDominantClass) {
  SynthTaskSpec spec;
  spec.num_clients = 20;
  spec.concentration = 0.05;
  const auto t = synth_federated_task(spec);
  std::vector<double> dominant;
  for (const auto& p : t.class_proportions) dominant.push_back(*std::max_element(p.begin(), p.end()));
  std::nth_element(dominant.begin(), dominant.begin() + 10, dominant.end());
  EXPECT_GT(dominant[10], 0.5);

  // The realised labels follow the drawn proportions: the dominant class is
  // also the most frequent label on most clients.
  std::size_t agree = 0;
  for (std::size_t k = 0; k < t.task.clients.size(); ++k) {
    const auto& y = t.task.clients[k].examples.targets;
    std::vector<double> freq(spec.num_classes, 0.0);
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t c = 0; c < y.cols(); ++c) freq[c] += y(r, c);
    const auto& p = t.class_proportions[k];
    agree += std::max_element(freq.begin(), freq.end()) - freq.begin() ==
             std::max_element(p.begin(), p.end()) - p.begin();
  }
  EXPECT_GE(agree, 16u);
}

TEST(SynthTask, DeterministicBitForBit) {
  SynthTaskSpec spec;
  spec.seed = 17;
  const auto a = synth_federated_task(spec);
  const auto b = synth_federated_task(spec);
  ASSERT_EQ(a.task.clients.size(), b.task.clients.size());
  for (std::size_t k = 0; k < a.task.clients.size(); ++k)
    EXPECT_EQ(a.task.clients[k].examples, b.task.clients[k].examples);
  EXPECT_EQ(a.task.eval.batch, b.task.eval.batch);
  spec.seed = 18;
  EXPECT_FALSE(synth_federated_task(spec).task.eval.batch == a.task.eval.batch);
}

TEST(SynthTask, SizesAndEvalCoverage) {
  SynthTaskSpec spec;
  spec.num_clients = 30;
  spec.num_classes = 12;
  spec.min_size = 5;
  spec.max_size = 300;
  const auto t = synth_federated_task(spec);
  std::size_t drawn = 0, held = 0;
  for (std::size_t k = 0; k < t.task.clients.size(); ++k) {
    drawn += t.drawn_sizes[k];
    held += t.task.clients[k].n();
    EXPECT_GE(t.drawn_sizes[k], 5u);
    EXPECT_LE(t.drawn_sizes[k], 300u);
  }
  EXPECT_EQ(drawn, held);
  const auto& y = t.task.eval.batch.targets;
  for (std::size_t c = 0; c < y.cols(); ++c) {
    double pos = 0.0;
    for (std::size_t r = 0; r < y.rows(); ++r) pos += y(r, c);
    EXPECT_GT(pos, 0.0) << "class " << c;
  }
}

TEST(SynthTask, PowerLawFavoursSmallClients) {
  SynthTaskSpec spec;
  spec.num_clients = 400;
  spec.size_exponent = 2.0;
  spec.min_size = 10;
  spec.max_size = 1000;
  spec.input_dim = 1;
  const auto t = synth_federated_task(spec);
  auto sizes = t.drawn_sizes;
  std::sort(sizes.begin(), sizes.end());
  // Median of a 1/x^2 law on [10, 1000] is about 20.
  EXPECT_LT(sizes[200], 30u);
  EXPECT_GT(sizes.back(), 150u);
}

TEST(SynthTask, InfeasibleSpecs) {
  SynthTaskSpec spec;
  spec.min_size = 50;
  spec.max_size = 10;
  EXPECT_THROW(synth_federated_task(spec), ValidationError);
  spec = {};
  spec.concentration = 0.0;
  EXPECT_THROW(synth_federated_task(spec), ValidationError);
  spec = {};
  spec.eval_fraction = 1.0;
  EXPECT_THROW(synth_federated_task(spec), ValidationError);
}

TEST(SynthTask, ManifestExport) {
  SynthTaskSpec spec;
  spec.num_clients = 3;
  spec.max_size = 30;
  const auto t = synth_federated_task(spec);
  const auto clips = task_manifest(t.task);
  std::size_t train = 0;
  for (const auto& c : clips) train += c.split == Split::train;
  std::size_t total = 0;
  for (const auto& c : t.task.clients) total += c.n();
  EXPECT_EQ(train, total);
  EXPECT_EQ(clips.size(), total + t.task.eval.size());
  EXPECT_EQ(partition_by_uploader(clips, 1).size(), 3u);
}
