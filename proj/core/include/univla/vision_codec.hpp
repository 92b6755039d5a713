#pragma once

#include "univla/image.hpp"
#include "univla/vocab.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace univla {

constexpr int kPatchEdge = 8;
constexpr int kPatchDim = kPatchEdge * kPatchEdge * 3;

/// Learned patch codebook: K centroids of dimension 192 (8×8×3).
struct VQCodebook {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> centroids; // K×192

    int size() const { return static_cast<int>(centroids.rows()); }

    void save(std::ostream& os) const;
    static VQCodebook load(std::istream& is);
};

/// Token grid produced by encode_image; ids are vocabulary IDs inside
/// vision_range, row-major.
struct TokenGrid {
    int rows = 0;
    int cols = 0;
    std::vector<int> ids;

    int at(int r, int c) const { return ids[static_cast<std::size_t>(r) * cols + c]; }
    int size() const { return rows * cols; }
};

/// Extracts the non-overlapping 8×8 patches of an image, row-major, each as a
/// 192-vector (y-major, x, then channel).
std::vector<Eigen::VectorXf> extract_patches(const Image& img);

/// k-means over all patches of the corpus: k-means++ initialization from the
/// seed, then 25 Lloyd iterations. Requires at least K distinct patches.
VQCodebook fit_codebook(const std::vector<Image>& images, int k, std::uint64_t seed);

/// Nearest centroid per patch (squared Euclidean distance, ties to the lowest
/// index), offset into vision_range.
TokenGrid encode_image(const Image& img, const VQCodebook& codebook, const Vocabulary& vocab);

/// Tiles each token's centroid patch back into an image, clipped to [0,1].
Image decode_image(const TokenGrid& grid, const VQCodebook& codebook, const Vocabulary& vocab);

} // namespace univla
