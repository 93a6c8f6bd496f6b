#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "moma/io.hpp"

using namespace moma;

TEST_CASE("tensor blob round-trips bit-exactly") {
    Rng rng(77);
    Tensor t = Tensor::randn({3, 4, 2}, rng);
    t.mut()[0] = 0.0;
    t.mut()[1] = -0.0;
    t.mut()[2] = 1e-308;
    t.mut()[3] = 1e300;

    std::stringstream ss;
    write_tensor(ss, t);
    Tensor back = read_tensor(ss);
    REQUIRE(back.shape() == t.shape());
    for (size_t i = 0; i < t.size(); ++i) {
        uint64_t a, b;
        double va = t.at(i), vb = back.at(i);
        std::memcpy(&a, &va, 8);
        std::memcpy(&b, &vb, 8);
        CHECK(a == b);
    }
}

TEST_CASE("tensor blob layout: magic, version, rank, dims") {
    Tensor t = Tensor::from({2, 1}, {1.5, -2.0});
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 2 + 2 + 2 * 8 + 2 * 8);
    CHECK(bytes.substr(0, 4) == "MOMA");
    CHECK(static_cast<uint8_t>(bytes[4]) == 1);  // version u16 LE
    CHECK(static_cast<uint8_t>(bytes[5]) == 0);
    CHECK(static_cast<uint8_t>(bytes[6]) == 2);  // rank u16 LE
    CHECK(static_cast<uint8_t>(bytes[7]) == 0);
    CHECK(static_cast<uint8_t>(bytes[8]) == 2);  // dim0 u64 LE
    CHECK(static_cast<uint8_t>(bytes[16]) == 1);  // dim1
}

TEST_CASE("bad magic and bad version are rejected") {
    std::stringstream ss("XOMA????????");
    CHECK_THROWS_AS(read_tensor(ss), IoError);

    Tensor t = Tensor::scalar(1.0);
    std::stringstream good;
    write_tensor(good, t);
    std::string bytes = good.str();
    bytes[4] = 9;  // version 9
    std::stringstream bad(bytes);
    CHECK_THROWS_AS(read_tensor(bad), IoError);
}

TEST_CASE("manifest round-trips named tensors with roles") {
    Rng rng(3);
    std::vector<NamedTensor> tensors = {{"a.w", "frozen", Tensor::randn({4, 4}, rng)},
                                        {"b.w", "trainable", Tensor::randn({2}, rng)}};
    const std::string hash = hash_tensors(tensors);
    const auto dir = std::filesystem::temp_directory_path() / "moma_manifest_test";
    save_manifest(dir, tensors, hash, "[model]\nchannels = 4\n");

    std::string recorded;
    auto loaded = load_manifest(dir, &recorded);
    CHECK(recorded == hash);
    REQUIRE(loaded.count("a.w") == 1);
    REQUIRE(loaded.count("b.w") == 1);
    for (size_t i = 0; i < tensors[0].tensor.size(); ++i)
        CHECK(loaded["a.w"].at(i) == tensors[0].tensor.at(i));
    CHECK(load_checkpoint_config(dir).find("channels = 4") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("hash is order- and value-sensitive") {
    Rng rng(4);
    Tensor a = Tensor::randn({3}, rng);
    Tensor b = Tensor::randn({3}, rng);
    const std::string h1 = hash_tensors({{"a", "frozen", a}, {"b", "frozen", b}});
    const std::string h2 = hash_tensors({{"b", "frozen", b}, {"a", "frozen", a}});
    CHECK(h1 != h2);

    Tensor a2 = a.clone();
    a2.mut()[0] += 1e-15;
    CHECK(hash_tensors({{"a", "frozen", a2}, {"b", "frozen", b}}) != h1);
    CHECK(hash_tensors({{"a", "frozen", a.clone()}, {"b", "frozen", b.clone()}}) == h1);
}

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("", 0) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
