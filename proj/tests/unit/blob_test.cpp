#include <gtest/gtest.h>

#include "fedsim/blob.hpp"
#include "fedsim/model.hpp"
#include "test_util.hpp"

using namespace fedsim;
using fedsim::testing::bit_equal;

namespace {

BlobError::Kind kind_of(const std::vector<unsigned char>& bytes) {
  try {
    decode_params(bytes);
  } catch (const BlobError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return BlobError::Kind::corrupt;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelSpec spec{trial % 2 ? ModelKind::mlp : ModelKind::linear, 1 + rng.below(9), 1 + rng.below(5),
                         1 + rng.below(6)};
    auto p = fedsim::testing::random_params(rng, spec, 1e3);
    p[0] = -0.0;
    p[p.size() - 1] = 5e-324;  // denormal
    EXPECT_TRUE(bit_equal(decode_params(encode_params(p)), p));
  }
}

TEST(Checkpoint, FileRoundTrip) {
  const ModelSpec spec{ModelKind::mlp, 3, 4, 2};
  const auto p = init_params(spec, 5);
  const std::string path = ::testing::TempDir() + "/ckpt.fsim";
  save_params(p, path);
  EXPECT_TRUE(bit_equal(load_params(path, spec.manifest()), p));
  const ModelSpec other{ModelKind::linear, 3, 0, 2};
  try {
    load_params(path, other.manifest());
    FAIL();
  } catch (const BlobError& e) {
    EXPECT_EQ(e.kind(), BlobError::Kind::manifest_mismatch);
  }
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  const ParameterVector p({{"w", {1}}}, {1.0});
  const auto b = encode_params(p);
  ASSERT_GE(b.size(), 6u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 5), "FSIM1");
  EXPECT_EQ(b[5], 'P');
  // last 8 bytes: 1.0 = 0x3FF0000000000000 little-endian
  const std::vector<unsigned char> tail(b.end() - 8, b.end());
  EXPECT_EQ(tail, (std::vector<unsigned char>{0, 0, 0, 0, 0, 0, 0xF0, 0x3F}));
}

TEST(Checkpoint, ErrorsAreDistinguished) {
  const auto good = encode_params(init_params({ModelKind::linear, 4, 0, 3}, 1));

  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_EQ(kind_of(truncated), BlobError::Kind::truncated);
  EXPECT_EQ(kind_of({good.begin(), good.begin() + 8}), BlobError::Kind::truncated);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), BlobError::Kind::bad_magic);
  EXPECT_EQ(kind_of({}), BlobError::Kind::bad_magic);

  auto wrong_kind = good;
  wrong_kind[5] = 'D';
  EXPECT_EQ(kind_of(wrong_kind), BlobError::Kind::wrong_kind);

  // Bump the stored value count so it disagrees with the manifest.
  auto count = good;
  const std::size_t count_off = good.size() - 15 * 8 - 8;
  count[count_off] += 1;
  EXPECT_EQ(kind_of(count), BlobError::Kind::manifest_mismatch);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(kind_of(trailing), BlobError::Kind::corrupt);
}

TEST(DatasetBlob, RoundTrip) {
  Rng rng(2);
  FederatedTask task;
  task.classes = {"a", "b", "c"};
  task.clients.push_back({"alice", fedsim::testing::random_batch(rng, 5, 4, 3)});
  task.clients.push_back({"bob", fedsim::testing::random_batch(rng, 2, 4, 3)});
  task.eval = EvalSet(fedsim::testing::random_batch(rng, 6, 4, 3), {0, 0, 1, 1, 1, 2});
  const auto back = decode_task(encode_task(task));
  EXPECT_EQ(back.classes, task.classes);
  ASSERT_EQ(back.clients.size(), 2u);
  EXPECT_EQ(back.clients[1].id, "bob");
  EXPECT_EQ(back.clients[0].examples, task.clients[0].examples);
  EXPECT_EQ(back.eval.batch, task.eval.batch);
  EXPECT_EQ(back.eval.groups, task.eval.groups);
  EXPECT_EQ(task_fingerprint(back), task_fingerprint(task));

  auto bytes = encode_task(task);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(decode_task(bytes), BlobError);
}
