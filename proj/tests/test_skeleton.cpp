// Copyright 2026 The U-FEFP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "ufefp/skeleton.hpp"

namespace {

using namespace ufefp;

SkeletonGraph star5(PartitionStrategy p) {
  SkeletonGraph g;
  g.joint_count = 5;
  g.center_joint = 0;
  g.edges = {{0, 1}, {0, 2}, {0, 3}, {0, 4}};
  g.partition = p;
  return g;
}

TEST(Adjacency, SingleNodeIsIdentity) {
  SkeletonGraph g;
  g.joint_count = 1;
  g.partition = PartitionStrategy::kUniform;
  const auto a = build_partitioned_adjacency(g);
  ASSERT_EQ(a.partitions(), 1);
  EXPECT_DOUBLE_EQ(a.at(0, 0, 0), 1.0);
}

TEST(Adjacency, TwoNodeChainUniform) {
  SkeletonGraph g = chain_graph(2);
  g.partition = PartitionStrategy::kUniform;
  const auto a = build_partitioned_adjacency(g);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(a.at(0, i, j), 0.5, 1e-15);
}

TEST(Adjacency, StarSpatialPartitionsSumToNormalizedStar) {
  // Normalized star: hub degree 5, leaf degree 2 (self loops included).
  // hub/hub 1/5, hub/leaf 1/sqrt(10), leaf/leaf diagonal 1/2.
  const double hub = 0.2, cross = 0.31622776601683794, leaf = 0.5;
  const auto a = build_partitioned_adjacency(star5(PartitionStrategy::kSpatial));
  ASSERT_EQ(a.partitions(), 3);
  const auto sum = a.summed();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      double expect = 0.0;
      if (i == 0 && j == 0) expect = hub;
      else if (i == 0 || j == 0) expect = cross;
      else if (i == j) expect = leaf;
      EXPECT_NEAR(sum[i * 5 + j], expect, 1e-9) << i << "," << j;
    }
  // root: equal hop distance; centripetal: column closer to the hub; centrifugal: farther.
  EXPECT_NEAR(a.at(0, 0, 0), hub, 1e-12);
  EXPECT_NEAR(a.at(0, 3, 3), leaf, 1e-12);
  EXPECT_NEAR(a.at(1, 2, 0), cross, 1e-12);
  EXPECT_EQ(a.at(1, 0, 2), 0.0);
  EXPECT_NEAR(a.at(2, 0, 2), cross, 1e-12);
  EXPECT_EQ(a.at(2, 2, 0), 0.0);
}

TEST(Adjacency, PartitionsSumToUniformOnNtuGraph) {
  SkeletonGraph spatial = ntu25_graph();
  SkeletonGraph uniform = spatial;
  uniform.partition = PartitionStrategy::kUniform;
  const auto s = build_partitioned_adjacency(spatial).summed();
  const auto u = build_partitioned_adjacency(uniform).matrices[0];
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], u[i], 1e-9);
  for (const auto& m : build_partitioned_adjacency(spatial).matrices)
    for (double v : m) EXPECT_GE(v, 0.0);
}

TEST(Adjacency, Deterministic) {
  const auto a = build_partitioned_adjacency(ntu25_graph());
  const auto b = build_partitioned_adjacency(ntu25_graph());
  EXPECT_EQ(a.matrices, b.matrices);
}

TEST(Adjacency, RejectsInvalidGraphs) {
  SkeletonGraph disconnected;
  disconnected.joint_count = 3;
  disconnected.edges = {{0, 1}};
  EXPECT_THROW(build_partitioned_adjacency(disconnected), StructuralError);

  SkeletonGraph loop = chain_graph(3);
  loop.edges.emplace_back(1, 1);
  EXPECT_THROW(loop.validate(), StructuralError);

  SkeletonGraph dup = chain_graph(3);
  dup.edges.emplace_back(1, 0);
  EXPECT_THROW(dup.validate(), StructuralError);

  SkeletonGraph bad_center = chain_graph(3);
  bad_center.center_joint = 3;
  EXPECT_THROW(bad_center.validate(), StructuralError);
}

TEST(Bone, ZeroInputGivesZero) {
  const SkeletonGraph g = ntu25_graph();
  SkeletonSequence s(4, 25);
  for (double v : derive_bone(s, g).coords) EXPECT_EQ(v, 0.0);
}

TEST(Bone, ThreeJointChainByHand) {
  const SkeletonGraph g = chain_graph(3);
  SkeletonSequence s(1, 3);
  const double p[3][3] = {{1, 2, 3}, {4, 6, 8}, {-1, 0, 5}};
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < 3; ++c) s.at(0, j, c) = p[j][c];
  const auto b = derive_bone(s, g);
  const double expect[3][3] = {{0, 0, 0}, {3, 4, 5}, {-5, -6, -3}};
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(b.at(0, j, c), expect[j][c]);
}

TEST(Bone, TranslationInvariantAndRootIsZero) {
  std::mt19937_64 rng(3);
  const SkeletonGraph g = ntu25_graph();
  SkeletonSequence s = oracle::random_sequence(6, 25, rng);
  SkeletonSequence moved = s;
  for (int f = 0; f < s.frames; ++f)
    for (int j = 0; j < 25; ++j)
      for (int c = 0; c < 3; ++c) moved.at(f, j, c) += 0.7 * (c + 1) - 0.3 * f;
  const auto a = derive_bone(s, g), b = derive_bone(moved, g);
  for (std::size_t i = 0; i < a.coords.size(); ++i) EXPECT_NEAR(a.coords[i], b.coords[i], 1e-12);
  for (int f = 0; f < s.frames; ++f)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(a.at(f, g.center_joint, c), 0.0);
}

TEST(Motion, ConstantAndSingleFrame) {
  SkeletonSequence s(5, 2);
  std::fill(s.coords.begin(), s.coords.end(), 3.5);
  for (double v : derive_motion(s).coords) EXPECT_EQ(v, 0.0);
  SkeletonSequence one(1, 2);
  one.coords = {1, 2, 3, 4, 5, 6};
  const auto m = derive_motion(one);
  EXPECT_EQ(m.frames, 1);
  for (double v : m.coords) EXPECT_EQ(v, 0.0);
}

TEST(Motion, LinearTrajectory) {
  SkeletonSequence s(6, 1);
  for (int f = 0; f < 6; ++f)
    for (int c = 0; c < 3; ++c) s.at(f, 0, c) = 0.5 + f * (c - 1.25);
  const auto m = derive_motion(s);
  for (int f = 0; f < 5; ++f)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(m.at(f, 0, c), c - 1.25, 1e-12);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(m.at(5, 0, c), 0.0);
}

TEST(Motion, ReversalRelation) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int f = 2 + trial % 7;
    SkeletonSequence s = oracle::random_sequence(f, 4, rng);
    const auto lhs = derive_motion(reverse(s));
    const auto rev = reverse(derive_motion(s));
    for (int t = 0; t + 1 < f; ++t)
      for (int j = 0; j < 4; ++j)
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(lhs.at(t, j, c), -rev.at(t + 1, j, c), 1e-12);
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(lhs.at(f - 1, j, c), 0.0);
  }
}

TEST(Reverse, SmallCases) {
  SkeletonSequence one(1, 1);
  one.coords = {1, 2, 3};
  EXPECT_EQ(reverse(one).coords, one.coords);

  SkeletonSequence abc(3, 1);
  abc.coords = {1, 1, 1, 2, 2, 2, 3, 3, 3};
  EXPECT_EQ(reverse(abc).coords, (std::vector<double>{3, 3, 3, 2, 2, 2, 1, 1, 1}));
}

TEST(Reverse, Involution) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    SkeletonSequence s = oracle::random_sequence(1 + trial, 7, rng);
    EXPECT_EQ(reverse(reverse(s)).coords, s.coords);
  }
}

TEST(Sequence, Validation) {
  SkeletonSequence s(2, 3);
  s.coords[4] = std::nan("");
  EXPECT_THROW(s.validate(), InputError);
  SkeletonSequence ok(2, 3);
  EXPECT_THROW(ok.validate(ntu25_graph()), StructuralError);
  EXPECT_EQ(parse_modality("bone"), Modality::kBone);
  EXPECT_THROW(parse_modality("depth"), ConfigError);
}

}  // namespace
