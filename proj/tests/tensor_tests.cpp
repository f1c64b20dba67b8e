#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gradweave/rng.hpp"
#include "gradweave/tensor.hpp"
#include "gradweave/tensor_io.hpp"

using namespace gradweave;

TEST_CASE("tensor shape/data consistency is enforced") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.f, 2.f}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({-1}), std::invalid_argument);
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.dim(1) == 3);
    for (float v : t.data) CHECK(v == 0.f);
}

TEST_CASE("tensor factories") {
    auto f = Tensor::full({2, 2}, 3.5f);
    for (float v : f.data) CHECK(v == 3.5f);
    auto s = Tensor::scalar(-1.f);
    CHECK(s.numel() == 1);
    CHECK(s.data[0] == -1.f);
    CHECK(shape_str(f) == "[2,2]");
}

TEST_CASE("all_finite flags NaN and Inf") {
    Tensor t({3}, {1.f, 2.f, 3.f});
    CHECK(t.all_finite());
    t.data[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK(!t.all_finite());
    t.data[1] = std::numeric_limits<float>::infinity();
    CHECK(!t.all_finite());
}

TEST_CASE("rng is deterministic per seed and differs across seeds") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_equal_c = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
        all_equal = all_equal && (va == vb);
        any_equal_c = any_equal_c || (va == vc);
    }
    CHECK(all_equal);
    CHECK(!any_equal_c);
}

TEST_CASE("rng uniform ranges and moments") {
    Rng r(7);
    double sum = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = r.next_double();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
        sum += v;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));

    int lo = 100, hi = -100;
    for (int i = 0; i < 1000; ++i) {
        int v = r.next_int(-3, 3);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == -3);
    CHECK(hi == 3);
}

TEST_CASE("derive_seed separates streams and ignores nothing") {
    uint64_t a = derive_seed(1, 2, 3);
    uint64_t b = derive_seed(1, 2, 4);
    uint64_t c = derive_seed(1, 3, 3);
    uint64_t d = derive_seed(2, 2, 3);
    CHECK(a != b);
    CHECK(a != c);
    CHECK(a != d);
    CHECK(derive_seed(1, 2, 3) == a);
}

TEST_CASE("rng shuffle is a permutation and seed-stable") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    Rng r(5);
    r.shuffle(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    std::vector<int> w{0, 1, 2, 3, 4, 5, 6, 7};
    Rng r2(5);
    r2.shuffle(w);
    CHECK(v == w);
}

TEST_CASE("tensor io round trip preserves bytes") {
    Tensor t({2, 3}, {1.f, -2.5f, 3e-8f, 4e8f, 0.f, -0.f});
    std::stringstream ss;
    write_tensor(ss, t);
    Tensor u = read_tensor(ss);
    CHECK(u.shape == t.shape);
    REQUIRE(u.data.size() == t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) {
        CHECK(std::memcmp(&u.data[i], &t.data[i], sizeof(float)) == 0);
    }
}

TEST_CASE("tensor io multi-record files") {
    namespace fs = std::filesystem;
    auto path = (fs::temp_directory_path() / "gw_io_test.gwt").string();
    std::vector<Tensor> recs{Tensor::full({1, 2, 2}, 1.f), Tensor::scalar(9.f),
                             Tensor({3}, {0.f, 1.f, 2.f})};
    write_tensor_file(path, recs);
    auto back = read_tensor_file(path);
    REQUIRE(back.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back[i].shape == recs[i].shape);
        CHECK(back[i].data == recs[i].data);
    }
    fs::remove(path);
}

TEST_CASE("tensor io rejects corrupt input") {
    std::stringstream ss;
    ss.write("NOPE", 4);
    CHECK_THROWS_AS(read_tensor(ss), std::runtime_error);

    std::stringstream truncated;
    write_tensor(truncated, Tensor::full({4}, 1.f));
    std::string bytes = truncated.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_tensor(cut), std::runtime_error);
}
