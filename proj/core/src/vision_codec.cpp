#include "univla/vision_codec.hpp"

#include "univla/common.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

namespace univla {

std::uint8_t channel_to_byte(float v) {
    float scaled = v * 255.0f;
    if (scaled <= 0.0f) return 0;
    if (scaled >= 255.0f) return 255;
    return static_cast<std::uint8_t>(std::lround(scaled));
}

std::vector<std::uint8_t> image_to_bytes(const Image& img) {
    std::vector<std::uint8_t> out(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) out[i] = channel_to_byte(img.data[i]);
    return out;
}

Image image_from_bytes(int h, int w, const std::uint8_t* bytes) {
    Image img(h, w);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = channel_from_byte(bytes[i]);
    return img;
}

namespace {

void check_divisible(const Image& img) {
    if (img.height <= 0 || img.width <= 0 || img.height % kPatchEdge || img.width % kPatchEdge)
        throw InvalidArgument("image dimensions must be positive multiples of 8");
    if (img.data.size() != static_cast<std::size_t>(img.height) * img.width * 3)
        throw InvalidArgument("image buffer size mismatch");
}

} // namespace

std::vector<Eigen::VectorXf> extract_patches(const Image& img) {
    check_divisible(img);
    const int gr = img.height / kPatchEdge, gc = img.width / kPatchEdge;
    std::vector<Eigen::VectorXf> patches;
    patches.reserve(static_cast<std::size_t>(gr) * gc);
    for (int pr = 0; pr < gr; ++pr)
        for (int pc = 0; pc < gc; ++pc) {
            Eigen::VectorXf v(kPatchDim);
            int i = 0;
            for (int y = 0; y < kPatchEdge; ++y)
                for (int x = 0; x < kPatchEdge; ++x)
                    for (int c = 0; c < 3; ++c)
                        v[i++] = img.at(pr * kPatchEdge + y, pc * kPatchEdge + x, c);
            patches.push_back(std::move(v));
        }
    return patches;
}

namespace {

using PatchMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

long count_distinct_rows(const PatchMatrix& p) {
    std::vector<int> idx(static_cast<std::size_t>(p.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    auto less = [&](int a, int b) {
        for (int j = 0; j < p.cols(); ++j) {
            if (p(a, j) < p(b, j)) return true;
            if (p(a, j) > p(b, j)) return false;
        }
        return false;
    };
    std::sort(idx.begin(), idx.end(), less);
    long distinct = p.rows() > 0 ? 1 : 0;
    for (std::size_t i = 1; i < idx.size(); ++i)
        if (less(idx[i - 1], idx[i])) ++distinct;
    return distinct;
}

// Squared distances of every row of p to the centroid row c, via the
// expansion |x|^2 - 2 x.c + |c|^2 computed blockwise.
void assign_nearest(const PatchMatrix& p, const PatchMatrix& centroids,
                    const Eigen::VectorXf& row_sq, std::vector<int>& assign) {
    const Eigen::Index n = p.rows(), k = centroids.rows();
    Eigen::VectorXf cent_sq = centroids.rowwise().squaredNorm();
    const Eigen::Index block = 16384;
    Eigen::MatrixXf dots;
    for (Eigen::Index start = 0; start < n; start += block) {
        const Eigen::Index len = std::min(block, n - start);
        dots.noalias() = p.middleRows(start, len) * centroids.transpose();
        for (Eigen::Index i = 0; i < len; ++i) {
            int best = 0;
            float best_d = row_sq[start + i] - 2.0f * dots(i, 0) + cent_sq[0];
            for (Eigen::Index j = 1; j < k; ++j) {
                float d = row_sq[start + i] - 2.0f * dots(i, j) + cent_sq[j];
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(j);
                }
            }
            assign[static_cast<std::size_t>(start + i)] = best;
        }
    }
}

} // namespace

VQCodebook fit_codebook(const std::vector<Image>& images, int k, std::uint64_t seed) {
    if (k < 1) throw InvalidArgument("fit_codebook: K must be positive");
    if (images.empty()) throw InvalidArgument("fit_codebook: empty corpus");
    std::size_t total = 0;
    for (const auto& img : images) {
        check_divisible(img);
        total += static_cast<std::size_t>(img.height / kPatchEdge) * (img.width / kPatchEdge);
    }
    PatchMatrix p(total, kPatchDim);
    std::size_t row = 0;
    for (const auto& img : images)
        for (const auto& patch : extract_patches(img)) p.row(static_cast<Eigen::Index>(row++)) = patch;

    if (count_distinct_rows(p) < k)
        throw InvalidArgument("fit_codebook: fewer than K distinct patches");

    const Eigen::Index n = p.rows();
    Rng rng(seed);

    // k-means++ seeding.
    PatchMatrix centroids(k, kPatchDim);
    centroids.row(0) = p.row(static_cast<Eigen::Index>(rng.randint(static_cast<std::uint64_t>(n))));
    Eigen::VectorXf min_d2 =
        (p.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        double tot = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) tot += static_cast<double>(min_d2[i]);
        double target = rng.uniform() * tot;
        Eigen::Index pick = n - 1;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            acc += static_cast<double>(min_d2[i]);
            if (acc > target && min_d2[i] > 0.0f) {
                pick = i;
                break;
            }
        }
        centroids.row(c) = p.row(pick);
        min_d2 = min_d2.cwiseMin((p.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }

    // Fixed 25 Lloyd iterations; empty clusters keep their previous centroid.
    Eigen::VectorXf row_sq = p.rowwise().squaredNorm();
    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    Eigen::MatrixXd sums(k, kPatchDim);
    std::vector<long> counts(static_cast<std::size_t>(k), 0);
    for (int it = 0; it < 25; ++it) {
        assign_nearest(p, centroids, row_sq, assign);
        sums.setZero();
        std::fill(counts.begin(), counts.end(), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += p.row(i).cast<double>();
            ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0)
                centroids.row(c) =
                    (sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]))
                        .cast<float>();
    }

    VQCodebook book;
    book.centroids = std::move(centroids);
    return book;
}

TokenGrid encode_image(const Image& img, const VQCodebook& codebook, const Vocabulary& vocab) {
    check_divisible(img);
    if (codebook.size() < 1) throw InvalidArgument("encode_image: empty codebook");
    if (codebook.size() > vocab.vision_range().size())
        throw InvalidArgument("encode_image: codebook larger than vision range");
    TokenGrid grid;
    grid.rows = img.height / kPatchEdge;
    grid.cols = img.width / kPatchEdge;
    grid.ids.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
    const int k = codebook.size();
    for (const auto& patch : extract_patches(img)) {
        int best = 0;
        double best_d = 0.0;
        for (int c = 0; c < k; ++c) {
            double d = 0.0;
            for (int j = 0; j < kPatchDim; ++j) {
                double diff = static_cast<double>(patch[j]) -
                              static_cast<double>(codebook.centroids(c, j));
                d += diff * diff;
            }
            if (c == 0 || d < best_d) {
                best_d = d;
                best = c;
            }
        }
        grid.ids.push_back(vocab.vision_id(best));
    }
    return grid;
}

Image decode_image(const TokenGrid& grid, const VQCodebook& codebook, const Vocabulary& vocab) {
    if (grid.rows < 1 || grid.cols < 1 ||
        grid.ids.size() != static_cast<std::size_t>(grid.rows) * grid.cols)
        throw InvalidArgument("decode_image: malformed grid");
    Image img(grid.rows * kPatchEdge, grid.cols * kPatchEdge);
    for (int pr = 0; pr < grid.rows; ++pr)
        for (int pc = 0; pc < grid.cols; ++pc) {
            int index = vocab.vision_index(grid.at(pr, pc));
            if (index >= codebook.size())
                throw InvalidArgument("decode_image: token index beyond codebook");
            int i = 0;
            for (int y = 0; y < kPatchEdge; ++y)
                for (int x = 0; x < kPatchEdge; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(pr * kPatchEdge + y, pc * kPatchEdge + x, c) =
                            std::clamp(codebook.centroids(index, i++), 0.0f, 1.0f);
        }
    return img;
}

void VQCodebook::save(std::ostream& os) const {
    write_magic(os, "UVQC");
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(centroids.rows()));
    write_u32(os, static_cast<std::uint32_t>(centroids.cols()));
    for (Eigen::Index r = 0; r < centroids.rows(); ++r)
        for (Eigen::Index c = 0; c < centroids.cols(); ++c) write_f32(os, centroids(r, c));
}

VQCodebook VQCodebook::load(std::istream& is) {
    expect_magic(is, "UVQC", "VQ codebook");
    if (read_u32(is) != 1) throw CorruptStream("VQ codebook: unsupported version");
    std::uint32_t k = read_u32(is);
    std::uint32_t dim = read_u32(is);
    if (k < 1 || dim != kPatchDim) throw CorruptStream("VQ codebook: bad shape");
    VQCodebook book;
    book.centroids.resize(k, kPatchDim);
    for (std::uint32_t r = 0; r < k; ++r)
        for (std::uint32_t c = 0; c < dim; ++c) book.centroids(r, c) = read_f32(is);
    if (!book.centroids.allFinite()) throw CorruptStream("VQ codebook: non-finite centroid");
    return book;
}

} // namespace univla
