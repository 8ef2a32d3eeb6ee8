#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ddad/checkpoint.hpp"
#include "ddad/network.hpp"
#include "test_support.hpp"

using namespace ddad;
using ddad::testing::random_tensor;

namespace {

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& blob) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

// corrupts bytes at `offset` and re-seals the trailing checksum, so the file
// is structurally "valid" but semantically altered
void patch_and_reseal(std::string& blob, std::size_t offset, const void* data, std::size_t len) {
    std::memcpy(blob.data() + offset, data, len);
    detail::Fnv1a64 fnv;
    fnv.update(blob.data(), blob.size() - 8);
    std::memcpy(blob.data() + blob.size() - 8, &fnv.h, 8);
}

}  // namespace

TEST(Fingerprint, StableAndSensitive) {
    NetworkState a(teacher_vector_spec(2, 3), 21);
    std::string f1 = param_fingerprint(a);
    std::string f2 = param_fingerprint(a);
    EXPECT_EQ(f1, f2);
    EXPECT_EQ(f1.size(), 16u);

    // a 1e-9 nudge to a single weight must change the hash
    a.named_params()[0].second.values()[0] += 1e-9;
    EXPECT_NE(param_fingerprint(a), f1);
}

TEST(Fingerprint, CoversBuffersToo) {
    NetworkState a(teacher_vector_spec(2, 3), 22);
    std::string before = param_fingerprint(a);
    a.named_buffers()[0].second.values()[0] += 0.5;
    EXPECT_NE(param_fingerprint(a), before);
}

TEST(Fingerprint, TransientBatchStatsExcluded) {
    NetworkState a(teacher_vector_spec(2, 3), 23);
    a.set_frozen(true);
    std::string before = param_fingerprint(a);
    Tensor x = random_tensor({4, 2}, 60, -1, 1, false);
    a.forward(x);  // frozen: touches batch stats, not buffers
    EXPECT_EQ(param_fingerprint(a), before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    std::string path = temp_path("ddad_ckpt_roundtrip.bin");
    NetworkState a(teacher_image_spec(1, 4), 24);
    // move the state away from init so the trip is non-trivial
    Tensor x = random_tensor({4, 1, 16, 16}, 61, -1, 1, false);
    a.forward(x);
    std::string fp = param_fingerprint(a);

    save_checkpoint(a, path);
    NetworkState b = load_checkpoint(path);
    EXPECT_EQ(param_fingerprint(b), fp);

    // identical behavior on a fixed input
    a.set_mode(Mode::Inference);
    b.set_mode(Mode::Inference);
    Tensor probe = random_tensor({2, 1, 16, 16}, 62, -1, 1, false);
    EXPECT_EQ(a.forward(probe).values(), b.forward(probe).values());
    std::remove(path.c_str());
}

TEST(Checkpoint, RoundTripPreservesSpec) {
    std::string path = temp_path("ddad_ckpt_spec.bin");
    NetworkState g(generator_image_spec(32, 3, true), 25);
    save_checkpoint(g, path);
    NetworkState back = load_checkpoint(path);
    EXPECT_EQ(back.spec().name, "generator");
    EXPECT_EQ(back.spec().layers.size(), g.spec().layers.size());
    EXPECT_EQ(back.spec().input_shape, (Shape{32}));
    std::remove(path.c_str());
}

TEST(Checkpoint, MissingFileIsIoError) {
    EXPECT_THROW(load_checkpoint(temp_path("ddad_no_such_file.bin")), IoError);
}

TEST(Checkpoint, CorruptionIsDetected) {
    std::string path = temp_path("ddad_ckpt_corrupt.bin");
    NetworkState a(student_vector_spec(2, 3), 26);
    save_checkpoint(a, path);
    std::string blob = read_file(path);
    blob[blob.size() / 2] ^= 0x40;  // flip one payload bit
    write_file(path, blob);
    EXPECT_THROW(load_checkpoint(path), CheckpointError);
    std::remove(path.c_str());
}

TEST(Checkpoint, TruncationIsDetected) {
    std::string path = temp_path("ddad_ckpt_trunc.bin");
    NetworkState a(student_vector_spec(2, 3), 27);
    save_checkpoint(a, path);
    std::string blob = read_file(path);
    write_file(path, blob.substr(0, blob.size() / 3));
    EXPECT_THROW(load_checkpoint(path), CheckpointError);
    std::remove(path.c_str());
}

TEST(Checkpoint, BadMagicIsRejected) {
    std::string path = temp_path("ddad_ckpt_magic.bin");
    NetworkState a(student_vector_spec(2, 3), 28);
    save_checkpoint(a, path);
    std::string blob = read_file(path);
    patch_and_reseal(blob, 0, "NOTACKPT", 8);
    write_file(path, blob);
    try {
        load_checkpoint(path);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
    std::remove(path.c_str());
}

TEST(Checkpoint, VersionMismatchIsNamed) {
    std::string path = temp_path("ddad_ckpt_version.bin");
    NetworkState a(student_vector_spec(2, 3), 29);
    save_checkpoint(a, path);
    std::string blob = read_file(path);
    std::uint32_t wrong = kCheckpointVersion + 7;
    patch_and_reseal(blob, 8, &wrong, sizeof wrong);
    write_file(path, blob);
    try {
        load_checkpoint(path);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
    std::remove(path.c_str());
}

TEST(Checkpoint, NoTempFileLeftBehind) {
    std::string path = temp_path("ddad_ckpt_atomic.bin");
    NetworkState a(student_vector_spec(2, 3), 30);
    save_checkpoint(a, path);
    EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
    EXPECT_TRUE(std::filesystem::exists(path));
    std::remove(path.c_str());
}

TEST(Checkpoint, RepeatedRoundTripsStayStable) {
    std::string path = temp_path("ddad_ckpt_repeat.bin");
    NetworkState a(teacher_vector_spec(2, 3), 31);
    std::string fp = param_fingerprint(a);
    for (int i = 0; i < 5; ++i) {
        save_checkpoint(a, path);
        a = load_checkpoint(path);
        EXPECT_EQ(param_fingerprint(a), fp);
    }
    std::remove(path.c_str());
}
