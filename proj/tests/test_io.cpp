#include <otmotion/io.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

using namespace otmotion;
using namespace otmotion::io;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir()
{
    const fs::path dir = fs::temp_directory_path() /
                         ("otmotion_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Matrix awkward_matrix()
{
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix m(7, 5);
    for (Index j = 0; j < 5; ++j)
        for (Index i = 0; i < 7; ++i) m(i, j) = u(rng) * std::pow(10.0, static_cast<double>(i * 40 - 140));
    m(0, 0) = 0.1;
    m(1, 1) = -0.0;
    m(2, 2) = std::numeric_limits<double>::denorm_min();
    m(3, 3) = std::numeric_limits<double>::max();
    m(4, 4) = 1.0 / 3.0;
    return m;
}

void write_text(const fs::path& p, const std::string& s)
{
    std::ofstream out(p, std::ios::binary);
    out << s;
}

bool bit_equal(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

} // namespace

TEST(Io, CsvRoundTripIsBitExact)
{
    const fs::path dir = scratch_dir();
    const Matrix m = awkward_matrix();
    write_csv(dir / "m.csv", m);
    EXPECT_TRUE(bit_equal(read_csv(dir / "m.csv"), m));
}

TEST(Io, BinaryRoundTripIsBitExact)
{
    const fs::path dir = scratch_dir();
    const Matrix m = awkward_matrix();
    write_matrix(dir / "m.bin", m);
    EXPECT_TRUE(bit_equal(read_matrix(dir / "m.bin"), m));
}

TEST(Io, EmptyMatrices)
{
    const fs::path dir = scratch_dir();
    write_csv(dir / "e.csv", Matrix(0, 3));
    const Matrix e = read_csv(dir / "e.csv");
    EXPECT_EQ(e.rows(), 0);
    EXPECT_EQ(e.cols(), 3);
    write_binary(dir / "e.bin", Matrix(4, 0));
    EXPECT_EQ(read_binary(dir / "e.bin").rows(), 4);
}

TEST(Io, RepeatedWritesAreByteIdentical)
{
    const fs::path dir = scratch_dir();
    const Matrix m = awkward_matrix();
    write_csv(dir / "a.csv", m);
    write_csv(dir / "b.csv", read_csv(dir / "a.csv"));
    std::ifstream a(dir / "a.csv"), b(dir / "b.csv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Io, CsvArityErrorReportsLine)
{
    const fs::path dir = scratch_dir();
    write_text(dir / "bad.csv", "# 3 2\n1,2\n3\n5,6\n");
    try {
        read_csv(dir / "bad.csv");
        FAIL() << "expected parse_error";
    } catch (const parse_error& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(Io, CsvMalformedInputs)
{
    const fs::path dir = scratch_dir();
    const std::pair<std::string, std::size_t> cases[] = {
        {"1,2\n", 1},             // no header
        {"# 2 2\n1,2\n", 3},      // missing row
        {"# 1 2\n1,x\n", 2},      // bad number
        {"# 1 2\n1,2\n3,4\n", 3}, // extra row
        {"# 1 2\n1,2,3\n", 2},    // extra column
        {"# a b\n", 1},           // bad header
    };
    for (const auto& [text, line] : cases) {
        write_text(dir / "bad.csv", text);
        try {
            read_csv(dir / "bad.csv");
            ADD_FAILURE() << "accepted: " << text;
        } catch (const parse_error& e) {
            EXPECT_EQ(e.line(), line) << text;
        }
    }
    EXPECT_THROW(read_csv(dir / "missing.csv"), parse_error);
}

TEST(Io, BinaryRejectsBadMagicAndTrailingBytes)
{
    const fs::path dir = scratch_dir();
    write_text(dir / "bad.bin", "NOTMAGIC0000000000000000");
    EXPECT_THROW(read_binary(dir / "bad.bin"), parse_error);

    write_binary(dir / "ok.bin", Matrix::Ones(2, 2));
    {
        std::ofstream out(dir / "ok.bin", std::ios::binary | std::ios::app);
        out << 'x';
    }
    EXPECT_THROW(read_binary(dir / "ok.bin"), parse_error);

    write_binary(dir / "short.bin", Matrix::Ones(3, 3));
    fs::resize_file(dir / "short.bin", fs::file_size(dir / "short.bin") - 8);
    EXPECT_THROW(read_binary(dir / "short.bin"), parse_error);
}

TEST(Io, JsonRoundTrip)
{
    const fs::path dir = scratch_dir();
    const json j = {{"seed", 7}, {"gamma", 0.1}, {"name", "twnmf"}};
    write_json(dir / "a.json", j);
    EXPECT_EQ(read_json(dir / "a.json"), j);
    write_text(dir / "bad.json", "{not json");
    EXPECT_THROW(read_json(dir / "bad.json"), parse_error);
}
