#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <limits>
#include <unistd.h>

#include "kernelscope/benchmarks.hpp"
#include "kernelscope/io.hpp"
#include "kernelscope/regression.hpp"

using namespace kernelscope;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("kernelscope_io_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir / name;
}

template <typename T>
void expect_bits_equal(const std::vector<T>& a, const std::vector<T>& b) {
    ASSERT_EQ(a.size(), b.size());
    ASSERT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(T)), 0);
}

KernelModel sample_model() {
    KernelModel m;
    m.reduction = build_PLwDC().true_B;
    m.reduction.provenance = Provenance::mpls_with_beta;
    m.space = HypothesisSpace::with_functions_per_dim(BasisFamily::clamped_bspline, 1, {-0.1, -0.7}, {0.6, 0.7}, 4);
    m.coefficients.resize(m.space.n_total());
    for (std::size_t k = 0; k < m.coefficients.size(); ++k) m.coefficients[k] = std::sin(static_cast<double>(k)) / 3.0;
    m.coefficients[0] = -0.0;
    m.coefficients[1] = std::numeric_limits<double>::denorm_min();
    return m;
}

}  // namespace

TEST(IoProperty, TrajectorySetRoundTrip) {
    const TrajectorySet t = generate_dataset(build_PL().system(2, 42), 7, 1);
    const fs::path p = scratch("train.ksc");
    io::save(p, t);
    const TrajectorySet u = io::load_trajectories(p);
    EXPECT_EQ(u.M, t.M);
    EXPECT_EQ(u.N, t.N);
    EXPECT_EQ(u.L, t.L);
    EXPECT_EQ(u.d, t.d);
    EXPECT_EQ(u.system, t.system);
    EXPECT_EQ(u.seed, t.seed);
    EXPECT_EQ(std::bit_cast<std::uint64_t>(u.T), std::bit_cast<std::uint64_t>(t.T));
    expect_bits_equal(u.times, t.times);
    expect_bits_equal(u.states, t.states);
    expect_bits_equal(u.velocities, t.velocities);
    EXPECT_EQ(io::encode(io::to_container(u)), io::read_file(p));
}

TEST(IoProperty, SampleSetRoundTrip) {
    const SampleSet s = extract_regression_samples(generate_dataset(build_OD().system(2, 3), 5, 1));
    const fs::path p = scratch("samples.ksc");
    io::save(p, s);
    const SampleSet u = io::load_samples(p);
    EXPECT_EQ(u.D, s.D);
    expect_bits_equal(u.y, s.y);
    expect_bits_equal(u.z, s.z);
    expect_bits_equal(u.weight_basis, s.weight_basis);
}

TEST(IoProperty, ReductionMapRoundTrip) {
    ReductionMap B = build_PLwDC({0.6, 0.8}).true_B;
    B.provenance = Provenance::mpls_without_beta;
    const fs::path p = scratch("B.ksc");
    io::save(p, B);
    const ReductionMap u = io::load_reduction_map(p);
    EXPECT_EQ(u.provenance, B.provenance);
    ASSERT_EQ(u.rows.rows(), B.rows.rows());
    ASSERT_EQ(u.rows.cols(), B.rows.cols());
    EXPECT_EQ(std::memcmp(u.rows.data(), B.rows.data(), sizeof(double) * static_cast<std::size_t>(B.rows.size())), 0);
}

TEST(IoProperty, KernelModelRoundTrip) {
    const KernelModel m = sample_model();
    const fs::path p = scratch("model.ksc");
    io::save(p, m);
    const KernelModel u = io::load_kernel_model(p);
    EXPECT_EQ(u.space.family, m.space.family);
    EXPECT_EQ(u.space.degree, m.space.degree);
    EXPECT_EQ(u.space.intervals, m.space.intervals);
    expect_bits_equal(u.space.lower, m.space.lower);
    expect_bits_equal(u.space.upper, m.space.upper);
    expect_bits_equal(u.coefficients, m.coefficients);
    EXPECT_EQ(u.reduction.provenance, m.reduction.provenance);
    EXPECT_EQ(std::memcmp(u.reduction.rows.data(), m.reduction.rows.data(), sizeof(double) * 28), 0);
    const std::vector<double> xi = {0.1, 0.2}, xk = {0.7, 0.4};
    const auto y = feature_map(xi, xk);
    EXPECT_EQ(u.evaluate(y), m.evaluate(y));
}

TEST(IoProperty, EncodeDecodeEncodeIdentical) {
    io::Container c;
    c.header = {{"kind", "custom"}, {"note", "x"}};
    c.arrays.push_back({"a", {2, 3}, {1.0, -2.5, std::numeric_limits<double>::infinity(), 0.0, -0.0, 1e-308}});
    c.arrays.push_back({"empty", {0}, {}});
    const std::string once = io::encode(c);
    const io::Container d = io::decode(once);
    EXPECT_EQ(io::encode(d), once);
    EXPECT_EQ(d.header.at("note"), "x");
    expect_bits_equal(d.array("a").values, c.arrays[0].values);
    EXPECT_EQ(d.array("a").shape, (std::vector<std::size_t>{2, 3}));
    EXPECT_THROW(d.array("missing"), IoError);
}

TEST(Io, CorruptInputsRejected) {
    const std::string good = io::encode(io::to_container(sample_model()));
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(io::decode(bad_magic), IoError);
    EXPECT_THROW(io::decode(good.substr(0, 10)), IoError);
    EXPECT_THROW(io::decode(good.substr(0, good.size() - 8)), IoError);
    EXPECT_THROW(io::decode(good + "x"), IoError);
    std::string huge_len = good;
    std::memset(huge_len.data() + 8, 0xff, 8);
    EXPECT_THROW(io::decode(huge_len), IoError);
    std::string bad_json = good;
    bad_json[16] = '[';
    EXPECT_THROW(io::decode(bad_json), IoError);
}

TEST(Io, WrongKindRejected) {
    const fs::path p = scratch("kind.ksc");
    io::save(p, build_PL().true_B);
    EXPECT_THROW(io::load_kernel_model(p), IoError);
    EXPECT_THROW(io::load_trajectories(p), IoError);
    EXPECT_NO_THROW(io::load_reduction_map(p));
}

TEST(Io, MissingHeaderFieldRejected) {
    io::Container c = io::to_container(build_PL().true_B);
    c.header.erase("D");
    const fs::path p = scratch("nofield.ksc");
    io::write_file_atomic(p, io::encode(c));
    EXPECT_THROW(io::load_reduction_map(p), IoError);
}

TEST(Io, AtomicWriteLeavesNoTemporary) {
    const fs::path p = scratch("sub/dir/file.bin");
    io::write_file_atomic(p, "first");
    io::write_file_atomic(p, "second");
    EXPECT_EQ(io::read_file(p), "second");
    fs::path tmp = p;
    tmp += ".tmp";
    EXPECT_FALSE(fs::exists(tmp));
}

TEST(Io, UnwritableAndMissingPaths) {
    const fs::path blocker = scratch("blocker");
    io::write_file_atomic(blocker, "x");
    EXPECT_THROW(io::write_file_atomic(blocker / "child.bin", "y"), IoError);
    EXPECT_THROW(io::read_file(scratch("does_not_exist.ksc")), IoError);
}

TEST(Io, ChecksumVectors) {
    EXPECT_EQ(io::hex(io::checksum("")), "cbf29ce484222325");
    EXPECT_EQ(io::hex(io::checksum("a")), "af63dc4c8601ec8c");
    EXPECT_EQ(io::hex(io::checksum("foobar")), "85944171f73967e8");
    EXPECT_EQ(io::hex(0x1), "0000000000000001");
}
