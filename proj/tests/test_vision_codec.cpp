#include "univla/vision_codec.hpp"

#include "univla/common.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace univla;

namespace {

Image noise_image(Rng& rng, int h, int w) {
    Image img(h, w);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

// Images tiled from `n` flat colors, so the optimal codebook is exactly those
// colors regardless of initialization.
std::vector<Image> flat_patch_images(int n, int per_image_patches) {
    std::vector<Image> out;
    Image img(kPatchEdge, kPatchEdge * per_image_patches);
    int next = 0;
    for (int p = 0; p < per_image_patches * n; ++p) {
        const int x0 = (p % per_image_patches) * kPatchEdge;
        const float shade = static_cast<float>(next) / static_cast<float>(n - 1);
        for (int y = 0; y < kPatchEdge; ++y)
            for (int x = 0; x < kPatchEdge; ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x0 + x, c) = shade;
        next = (next + 1) % n;
        if ((p + 1) % per_image_patches == 0) {
            out.push_back(img);
            img = Image(kPatchEdge, kPatchEdge * per_image_patches);
        }
    }
    return out;
}

} // namespace

TEST_SUITE_BEGIN("vision_codec");

TEST_CASE("patch extraction is row-major with y-x-channel layout") {
    Image img(16, 24);
    Rng rng(3);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    const std::vector<Eigen::VectorXf> patches = extract_patches(img);
    REQUIRE(patches.size() == 2 * 3);
    for (const auto& p : patches) REQUIRE(p.size() == kPatchDim);
    // patch index 4 covers rows 8..15, cols 8..15
    const Eigen::VectorXf& p = patches[4];
    for (int y = 0; y < kPatchEdge; ++y)
        for (int x = 0; x < kPatchEdge; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(p[(y * kPatchEdge + x) * 3 + c] == img.at(8 + y, 8 + x, c));
}

TEST_CASE("patch extraction rejects sizes off the patch lattice") {
    CHECK_THROWS_AS(extract_patches(Image(12, 16)), InvalidArgument);
    CHECK_THROWS_AS(extract_patches(Image(0, 0)), InvalidArgument);
}

TEST_CASE("token counts follow the spatial compression factor") {
    Rng rng(7);
    const VQCodebook cb = fit_codebook(flat_patch_images(8, 4), 8, 99);
    const Vocabulary vocab = Vocabulary::build(2, cb.size(), 4);

    const TokenGrid small = encode_image(noise_image(rng, 32, 32), cb, vocab);
    CHECK(small.rows == 4);
    CHECK(small.cols == 4);
    CHECK(small.size() == 16);

    const TokenGrid big = encode_image(noise_image(rng, 256, 256), cb, vocab);
    CHECK(big.rows == 32);
    CHECK(big.cols == 32);
    CHECK(big.size() == 1024);
}

TEST_CASE("well-separated flat colors recover the exact color set") {
    const int k = 6;
    const std::vector<Image> imgs = flat_patch_images(k, 5);
    const VQCodebook cb = fit_codebook(imgs, k, 1234);
    REQUIRE(cb.size() == k);

    std::set<int> matched;
    for (int c = 0; c < k; ++c) {
        const float shade = static_cast<float>(c) / static_cast<float>(k - 1);
        int best = -1;
        for (int j = 0; j < k; ++j) {
            bool all = true;
            for (int t = 0; t < kPatchDim && all; ++t)
                all = std::abs(cb.centroids(j, t) - shade) < 1e-4f;
            if (all) best = j;
        }
        CHECK(best >= 0);
        matched.insert(best);
    }
    CHECK(matched.size() == k); // every color claimed a distinct centroid
}

TEST_CASE("k equal to one yields the corpus mean patch") {
    Rng rng(17);
    std::vector<Image> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(noise_image(rng, 16, 16));
    const VQCodebook cb = fit_codebook(imgs, 1, 5);
    REQUIRE(cb.size() == 1);

    std::vector<double> mean(kPatchDim, 0.0);
    int n = 0;
    for (const Image& img : imgs)
        for (const Eigen::VectorXf& p : extract_patches(img)) {
            for (int t = 0; t < kPatchDim; ++t) mean[static_cast<std::size_t>(t)] += p[t];
            ++n;
        }
    for (int t = 0; t < kPatchDim; ++t)
        CHECK(cb.centroids(0, t) ==
              doctest::Approx(mean[static_cast<std::size_t>(t)] / n).epsilon(1e-4));
}

TEST_CASE("fitting requires enough distinct patches") {
    const std::vector<Image> imgs = flat_patch_images(3, 4);
    CHECK_THROWS_AS(fit_codebook(imgs, 8, 0), InvalidArgument);
    CHECK_THROWS_AS(fit_codebook(imgs, 0, 0), InvalidArgument);
    CHECK_THROWS_AS(fit_codebook({}, 2, 0), InvalidArgument);
}

TEST_CASE("fitting is reproducible from the seed") {
    Rng rng(23);
    std::vector<Image> imgs;
    for (int i = 0; i < 4; ++i) imgs.push_back(noise_image(rng, 24, 24));
    const VQCodebook a = fit_codebook(imgs, 8, 42);
    const VQCodebook b = fit_codebook(imgs, 8, 42);
    CHECK(a.centroids == b.centroids);
    const VQCodebook c = fit_codebook(imgs, 8, 43);
    CHECK(a.centroids != c.centroids);
}

TEST_CASE("encoding matches exhaustive nearest-centroid search") {
    Rng rng(29);
    std::vector<Image> imgs;
    for (int i = 0; i < 6; ++i) imgs.push_back(noise_image(rng, 32, 32));
    const VQCodebook cb = fit_codebook(imgs, 16, 7);
    const Vocabulary vocab = Vocabulary::build(2, cb.size(), 4);

    for (int i = 0; i < 10; ++i) {
        const Image img = noise_image(rng, 32, 32);
        const TokenGrid grid = encode_image(img, cb, vocab);
        const std::vector<Eigen::VectorXf> patches = extract_patches(img);
        REQUIRE(grid.size() == static_cast<int>(patches.size()));
        for (int p = 0; p < grid.size(); ++p) {
            const int id = grid.ids[static_cast<std::size_t>(p)];
            CHECK(vocab.vision_range().contains(id));
            CHECK(vocab.vision_index(id) ==
                  oracle::nearest_centroid(patches[static_cast<std::size_t>(p)], cb.centroids));
        }
    }
}

TEST_CASE("nearest-centroid ties resolve to the lowest index") {
    VQCodebook cb;
    cb.centroids.resize(3, kPatchDim);
    cb.centroids.row(0).setConstant(0.25f);
    cb.centroids.row(1).setConstant(0.75f); // equidistant from 0.5 with row 0
    cb.centroids.row(2).setConstant(0.75f); // duplicate centroid
    const Vocabulary vocab = Vocabulary::build(2, 3, 4);
    Image img(kPatchEdge, kPatchEdge);
    for (float& v : img.data) v = 0.5f;
    const TokenGrid g = encode_image(img, cb, vocab);
    CHECK(vocab.vision_index(g.ids[0]) == 0);

    for (float& v : img.data) v = 0.8f; // rows 1 and 2 tie exactly
    const TokenGrid g2 = encode_image(img, cb, vocab);
    CHECK(vocab.vision_index(g2.ids[0]) == 1);
}

TEST_CASE("decode tiles centroid patches back into the image") {
    const int k = 4;
    const std::vector<Image> imgs = flat_patch_images(k, 6);
    const VQCodebook cb = fit_codebook(imgs, k, 11);
    const Vocabulary vocab = Vocabulary::build(2, cb.size(), 4);

    // flat-color images are exactly representable, so the round trip is tight
    const Image& img = imgs[0];
    const TokenGrid grid = encode_image(img, cb, vocab);
    const Image back = decode_image(grid, cb, vocab);
    REQUIRE(back.height == img.height);
    REQUIRE(back.width == img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(std::abs(back.data[i] - img.data[i]) < 1e-4f);
}

TEST_CASE("codebook serialization round trips bit-exactly") {
    Rng rng(37);
    std::vector<Image> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(noise_image(rng, 16, 16));
    const VQCodebook cb = fit_codebook(imgs, 4, 3);
    std::stringstream ss;
    cb.save(ss);
    const VQCodebook lo = VQCodebook::load(ss);
    REQUIRE(lo.size() == cb.size());
    CHECK(lo.centroids == cb.centroids);
}

TEST_CASE("byte conversion is an exact round trip on byte-born values") {
    for (int b = 0; b < 256; ++b) {
        const float v = channel_from_byte(static_cast<std::uint8_t>(b));
        CHECK(channel_to_byte(v) == b);
    }
    CHECK(channel_to_byte(-0.5f) == 0);
    CHECK(channel_to_byte(2.0f) == 255);

    Rng rng(41);
    const Image img = noise_image(rng, 8, 8);
    const std::vector<std::uint8_t> bytes = image_to_bytes(img);
    REQUIRE(bytes.size() == img.data.size());
    const Image back = image_from_bytes(8, 8, bytes.data());
    const std::vector<std::uint8_t> bytes2 = image_to_bytes(back);
    CHECK(bytes == bytes2); // byte → float → byte is the identity
}

TEST_SUITE_END();
