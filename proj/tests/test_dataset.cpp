#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "dfl/dataset.hpp"
#include "dfl/model.hpp"
#include "dfl/optim.hpp"

using namespace dfl;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("dfl_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

// histogram of labels restricted to an index list
std::vector<int> label_hist(const Dataset& ds, const std::vector<int>& idx, int classes) {
    std::vector<int> h(classes, 0);
    for (int i : idx) ++h[ds.labels[i]];
    return h;
}

}  // namespace

TEST_CASE("load_idx: byte-exact fixture round trip") {
    TempDir tmp;
    // two 2x3 images with known bytes
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803u);
    push_be32(img, 2);
    push_be32(img, 2);
    push_be32(img, 3);
    const unsigned char pix[12] = {0, 51, 102, 153, 204, 255, 10, 20, 30, 40, 50, 60};
    img.insert(img.end(), pix, pix + 12);
    std::vector<unsigned char> lab;
    push_be32(lab, 0x00000801u);
    push_be32(lab, 2);
    lab.push_back(7);
    lab.push_back(3);
    write_bytes(tmp.path / "img", img);
    write_bytes(tmp.path / "lab", lab);

    const auto ds = load_idx((tmp.path / "img").string(), (tmp.path / "lab").string());
    REQUIRE(ds.count() == 2);
    CHECK(ds.height() == 2);
    CHECK(ds.width() == 3);
    CHECK(ds.labels[0] == 7);
    CHECK(ds.labels[1] == 3);
    for (int p = 0; p < 6; ++p) CHECK(ds.images[p] == Catch::Approx(pix[p] / 255.0).margin(0.0));
    for (int p = 0; p < 6; ++p) CHECK(ds.images[6 + p] == Catch::Approx(pix[6 + p] / 255.0).margin(0.0));
}

TEST_CASE("load_idx: error paths") {
    TempDir tmp;
    // label file carrying the image magic
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803u);
    push_be32(img, 1);
    push_be32(img, 1);
    push_be32(img, 1);
    img.push_back(99);
    std::vector<unsigned char> bad_lab;
    push_be32(bad_lab, 0x00000803u);
    push_be32(bad_lab, 1);
    bad_lab.push_back(1);
    write_bytes(tmp.path / "img", img);
    write_bytes(tmp.path / "bad_lab", bad_lab);
    CHECK_THROWS_AS(load_idx((tmp.path / "img").string(), (tmp.path / "bad_lab").string()), FormatError);

    // empty file
    write_bytes(tmp.path / "empty", {});
    CHECK_THROWS_AS(load_idx((tmp.path / "empty").string(), (tmp.path / "empty").string()), IoError);

    // count mismatch
    std::vector<unsigned char> lab2;
    push_be32(lab2, 0x00000801u);
    push_be32(lab2, 2);
    lab2.push_back(0);
    lab2.push_back(1);
    write_bytes(tmp.path / "lab2", lab2);
    CHECK_THROWS_AS(load_idx((tmp.path / "img").string(), (tmp.path / "lab2").string()), DataError);

    // truncated image payload
    std::vector<unsigned char> trunc;
    push_be32(trunc, 0x00000803u);
    push_be32(trunc, 2);
    push_be32(trunc, 2);
    push_be32(trunc, 3);
    trunc.push_back(1);  // far fewer than 12 bytes
    std::vector<unsigned char> lab3;
    push_be32(lab3, 0x00000801u);
    push_be32(lab3, 2);
    lab3.push_back(0);
    lab3.push_back(1);
    write_bytes(tmp.path / "trunc", trunc);
    write_bytes(tmp.path / "lab3", lab3);
    CHECK_THROWS_AS(load_idx((tmp.path / "trunc").string(), (tmp.path / "lab3").string()), IoError);

    CHECK_THROWS_AS(load_idx((tmp.path / "missing").string(), (tmp.path / "lab3").string()), IoError);
}

TEST_CASE("synth_dataset: determinism, balance, validity") {
    const auto a = synth_dataset(1, 100, 10);
    const auto b = synth_dataset(1, 100, 10);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);

    const auto c = synth_dataset(2, 100, 10);
    CHECK_FALSE(a.images == c.images);

    // label histogram max-min <= 1
    std::vector<int> all(100);
    std::iota(all.begin(), all.end(), 0);
    const auto h = label_hist(a, all, 10);
    const auto [mn, mx] = std::minmax_element(h.begin(), h.end());
    CHECK(*mx - *mn <= 1);

    for (std::size_t i = 0; i < a.images.size(); ++i) {
        REQUIRE(a.images[i] >= 0.0);
        REQUIRE(a.images[i] <= 1.0);
    }

    CHECK_THROWS_AS(synth_dataset(1, 0, 10), ConfigError);
    CHECK_THROWS_AS(synth_dataset(1, 5, 10), ConfigError);
}

TEST_CASE("synth_dataset: a linear classifier clears 80% held-out accuracy") {
    const auto train = synth_dataset(42, 1500, 10);
    const auto test = synth_dataset(derive_seed(42, 0x7E57), 500, 10);

    Architecture arch;
    arch.input_h = 28;
    arch.input_w = 28;
    arch.layers.push_back({DenseSpec{784, 10}, false, false, 0.0});
    auto params = init_params(arch, 7, InitMode::SharedUniform);
    auto st = OptimizerState::create(OptimizerKind::SGD, 0.1, params);

    std::vector<int> order(train.count());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> identity(train.count());
    std::iota(identity.begin(), identity.end(), 0);
    Rng rng(99);
    const int B = 32;
    for (int epoch = 0; epoch < 5; ++epoch) {
        rng.shuffle(order);
        for (int start = 0; start + B <= train.count(); start += B) {
            std::vector<int> pos(order.begin() + start, order.begin() + start + B);
            const auto images = gather_images(train, identity, pos, 0.0, 1.0);
            const auto labels = gather_labels(train, identity, pos);
            const auto [loss, grads] = loss_and_gradient(arch, params, images, labels);
            optimizer_step(params, grads, st);
        }
    }

    std::vector<int> test_pos(test.count());
    std::iota(test_pos.begin(), test_pos.end(), 0);
    const auto timg = gather_images(test, test_pos, test_pos, 0.0, 1.0);
    const auto lp = forward(arch, params, timg);
    int correct = 0;
    for (int i = 0; i < test.count(); ++i) {
        int arg = 0;
        for (int j = 1; j < 10; ++j)
            if (lp(i, j) > lp(i, arg)) arg = j;
        if (arg == test.labels[i]) ++correct;
    }
    const double acc = static_cast<double>(correct) / test.count();
    INFO("held-out accuracy: " << acc);
    CHECK(acc >= 0.80);
}

TEST_CASE("partition_iid: even split, disjoint union, label mix") {
    const auto ds = synth_dataset(3, 100, 10);
    const auto plan = partition_iid(ds, 10, 5);
    REQUIRE(plan.num_clients() == 10);
    std::set<int> seen;
    for (const auto& part : plan.client_indices) {
        CHECK(part.size() == 10);
        for (int i : part) {
            CHECK(i >= 0);
            CHECK(i < 100);
            CHECK(seen.insert(i).second);  // disjointness
        }
    }
    CHECK(seen.size() == 100);  // union covers everything when K | N

    // sizes differ by at most one when K does not divide N
    const auto ds2 = synth_dataset(3, 103, 10);
    const auto plan2 = partition_iid(ds2, 10, 5);
    std::size_t mn = 1e9, mx = 0, total = 0;
    for (const auto& p : plan2.client_indices) {
        mn = std::min(mn, p.size());
        mx = std::max(mx, p.size());
        total += p.size();
    }
    CHECK(mx - mn <= 1);
    CHECK(total <= 103);

    CHECK_THROWS_AS(partition_iid(ds, 101, 5), ConfigError);
    CHECK(partition_iid(ds, 10, 5) == plan);  // determinism
}

TEST_CASE("partition_iid: per-part label histogram near global proportions") {
    const auto ds = synth_dataset(17, 10000, 10);
    const auto plan = partition_iid(ds, 10, 23);
    // multinomial 3-sigma bound per (part, label) cell at p = 1/10
    for (const auto& part : plan.client_indices) {
        const auto h = label_hist(ds, part, 10);
        const double n = static_cast<double>(part.size());
        const double expect = n * 0.1;
        const double sigma = std::sqrt(n * 0.1 * 0.9);
        for (int c = 0; c < 10; ++c) {
            CHECK(std::abs(h[c] - expect) <= 3.0 * sigma);
        }
    }
}

TEST_CASE("gaussian_sizes_from_draws: direct substitution") {
    // |x| = (1, 3), |D| = 400, floor B = 10 -> (100, 300)
    const auto sizes = gaussian_sizes_from_draws({1.0, 3.0}, 400, 10);
    REQUIRE(sizes.size() == 2);
    CHECK(sizes[0] == 100);
    CHECK(sizes[1] == 300);

    // sign is irrelevant, |x| enters the formula
    const auto neg = gaussian_sizes_from_draws({-1.0, 3.0}, 400, 10);
    CHECK(neg == sizes);

    // the literal min() reading collapses everything to the batch size
    const auto lit = gaussian_sizes_from_draws({1.0, 3.0}, 400, 10, true);
    CHECK(lit[0] == 10);
    CHECK(lit[1] == 10);

    // all-zero draws fall back to the equal split
    const auto zero = gaussian_sizes_from_draws({0.0, 0.0}, 400, 10);
    CHECK(zero[0] == 200);
    CHECK(zero[1] == 200);
}

TEST_CASE("partition_gaussian_sizes: floor contract and disjointness") {
    const auto ds = synth_dataset(5, 2000, 10);
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        const auto plan = partition_gaussian_sizes(ds, 10, 10.0, 64, seed);
        std::set<int> seen;
        std::size_t total = 0;
        for (const auto& part : plan.client_indices) {
            CHECK(part.size() >= 64);  // every N_i >= B
            total += part.size();
            for (int i : part) CHECK(seen.insert(i).second);
        }
        CHECK(total <= 2000);
    }
    // sigma^2 -> 0 degenerates to a near-equal split
    const auto even = partition_gaussian_sizes(ds, 10, 0.0, 64, 9);
    for (const auto& part : even.client_indices) CHECK(part.size() == 200);

    CHECK_THROWS_AS(partition_gaussian_sizes(ds, 40, 1.0, 64, 1), ConfigError);  // K*B > N
}

TEST_CASE("partition_skewed: skew contract") {
    const auto ds = synth_dataset(11, 10000, 10);

    // U=1: every client holds only its own label
    const auto full = partition_skewed(ds, 10, 1.0, 3);
    for (int i = 0; i < 10; ++i) {
        CHECK(measured_skewedness(ds, full, i) == 1.0);
        CHECK(full.client_indices[i].size() == 1000);
    }

    // measured U within one sample quantum of the configured U
    const auto half = partition_skewed(ds, 10, 0.5, 3);
    for (int i = 0; i < 10; ++i) {
        const double m = measured_skewedness(ds, half, i);
        CHECK(std::abs(m - 0.5) <= 1.0 / 1000.0);
    }

    // disjoint pre-sharing
    std::set<int> seen;
    for (const auto& part : half.client_indices)
        for (int i : part) CHECK(seen.insert(i).second);

    // U = 1/classes is IID-like composition
    const auto iidish = partition_skewed(ds, 10, 0.1, 3);
    for (int i = 0; i < 10; ++i) {
        CHECK(std::abs(measured_skewedness(ds, iidish, i) - 0.1) <= 1.0 / 1000.0);
    }

    CHECK_THROWS_AS(partition_skewed(ds, 5, 1.0, 3), ConfigError);

    // class starvation: hand-build a set missing most of class 0
    Dataset tiny;
    tiny.num_classes = 10;
    tiny.images = Tensor({100, 1, 2, 2});
    tiny.labels.resize(100);
    for (int i = 0; i < 100; ++i) tiny.labels[i] = 1 + (i % 9);  // no zeros at all
    CHECK_THROWS_AS(partition_skewed(tiny, 10, 1.0, 3), DataError);
}

TEST_CASE("share_data: identity, sizes, and no duplicates") {
    const auto ds = synth_dataset(13, 5000, 10);
    const auto base = partition_skewed(ds, 10, 1.0, 7);

    const auto same = share_data(base, 0.0, 1);
    CHECK(same.client_indices == base.client_indices);

    const auto shared = share_data(base, 0.1, 1);
    for (int i = 0; i < 10; ++i) {
        // each donor gives round(S*500)/9 to each recipient: |D'| = (1+S)|D| up to K rounding
        const double expect = 1.1 * 500.0;
        CHECK(std::abs(static_cast<double>(shared.client_indices[i].size()) - expect) <= 10.0);
        std::set<int> within(shared.client_indices[i].begin(), shared.client_indices[i].end());
        CHECK(within.size() == shared.client_indices[i].size());  // no duplicate within one recipient
    }

    // donors keep their data: original indices still present
    for (int i = 0; i < 10; ++i) {
        std::set<int> now(shared.client_indices[i].begin(), shared.client_indices[i].end());
        for (int idx : base.client_indices[i]) CHECK(now.count(idx) == 1);
    }

    CHECK(share_data(base, 0.1, 1).client_indices == shared.client_indices);  // determinism
}

TEST_CASE("expected_skewedness: closed forms") {
    const std::vector<double> equal(10, 1000.0);
    CHECK(expected_skewedness(1.0, 0.0, 10, equal) == Catch::Approx(1.0).margin(1e-12));
    CHECK(expected_skewedness(0.0, 0.1, 10, equal) == Catch::Approx(0.1 / 1.1).margin(1e-12));
    // U=1, S=0.1: 9/9.9
    CHECK(expected_skewedness(1.0, 0.1, 10, equal) == Catch::Approx(9.0 / 9.9).margin(1e-12));
}

TEST_CASE("expected_skewedness: Monte-Carlo agreement at the fully-skewed setting") {
    const auto ds = synth_dataset(29, 5000, 10);
    const double predicted = expected_skewedness(1.0, 0.1, 10, std::vector<double>(10, 500.0));
    double acc = 0.0;
    int count = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto base = partition_skewed(ds, 10, 1.0, derive_seed(31, seed));
        const auto shared = share_data(base, 0.1, derive_seed(37, seed));
        for (int i = 0; i < 10; ++i) {
            acc += measured_skewedness(ds, shared, i);
            ++count;
        }
    }
    const double mc = acc / count;
    INFO("predicted " << predicted << " measured " << mc);
    CHECK(std::abs(mc - predicted) <= 0.02);
}

TEST_CASE("apply_normalization: views and modes") {
    const auto ds = synth_dataset(41, 200, 10);
    auto plan = partition_iid(ds, 10, 1);

    const double mu_m = dataset_mean(ds);
    const double sd_m = dataset_std(ds);
    CHECK(sd_m > 0.0);

    // identity: mu_i = mu_M for all i matches global normalization
    apply_normalization(plan, std::vector<double>(10, mu_m), sd_m);
    const std::vector<int> pos = {0, 1};
    const auto v0 = gather_images(ds, plan.client_indices[0], pos, plan.mu[0], plan.sigma[0]);
    const auto raw = gather_images(ds, plan.client_indices[0], pos, 0.0, 1.0);
    for (std::size_t i = 0; i < v0.size(); ++i)
        CHECK(v0[i] == Catch::Approx((raw[i] - mu_m) / sd_m).margin(1e-12));

    // the shifted-mean pattern: -0.1 x4, +0.1 x4, +0.3 x2
    std::vector<double> shifted(10);
    for (int i = 0; i < 10; ++i) {
        const double off = i < 4 ? -0.1 : (i < 8 ? 0.1 : 0.3);
        shifted[i] = mu_m + off;
    }
    apply_normalization(plan, shifted, sd_m);
    CHECK(plan.mu[0] == Catch::Approx(mu_m - 0.1));
    CHECK(plan.mu[5] == Catch::Approx(mu_m + 0.1));
    CHECK(plan.mu[9] == Catch::Approx(mu_m + 0.3));

    // local statistics mode: mu_i from the client's own pixels
    std::vector<double> local(10);
    for (int i = 0; i < 10; ++i) local[i] = client_pixel_mean(ds, plan.client_indices[i]);
    apply_normalization(plan, local, sd_m);
    for (int i = 0; i < 10; ++i) CHECK(std::isfinite(plan.mu[i]));

    CHECK_THROWS_AS(apply_normalization(plan, std::vector<double>(10, 0.5), 0.0), ConfigError);
    CHECK_THROWS_AS(apply_normalization(plan, std::vector<double>(3, 0.5), 1.0), ConfigError);
}
