#include <otmotion/evaluation.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace otmotion;

namespace {

double brute_force_best(const Matrix& s)
{
    std::vector<Index> perm(static_cast<std::size_t>(s.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = -std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (Index i = 0; i < s.rows(); ++i) total += s(i, perm[static_cast<std::size_t>(i)]);
        best = std::max(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

std::vector<Matrix> random_footprints(Index K, Index d, Index T, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Matrix> out;
    for (Index k = 0; k < K; ++k) {
        Matrix m(d, T);
        for (Index j = 0; j < T; ++j)
            for (Index i = 0; i < d; ++i) m(i, j) = u(rng);
        out.push_back(m);
    }
    return out;
}

} // namespace

TEST(Evaluation, PearsonBasics)
{
    Vector x(4);
    x << 1, 2, 3, 4;
    EXPECT_NEAR(pearson(x, x), 1.0, 1e-15);
    EXPECT_NEAR(pearson(x, -x), -1.0, 1e-15);
    EXPECT_NEAR(pearson(x, (3.0 * x.array() + 7.0).matrix()), 1.0, 1e-15);
    EXPECT_EQ(pearson(x, Vector::Constant(4, 2.0)), 0.0);
    EXPECT_THROW(pearson(x, Vector::Zero(3)), invalid_argument_error);
}

TEST(Evaluation, SummarizeUsesPopulationStd)
{
    Vector v(4);
    v << 1, 2, 3, 4;
    const Score s = summarize(v);
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_NEAR(s.std, std::sqrt(1.25), 1e-15);
}

TEST(Evaluation, HungarianMatchesBruteForce)
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Index K = 1; K <= 6; ++K) {
        for (int rep = 0; rep < 20; ++rep) {
            Matrix s(K, K);
            for (Index j = 0; j < K; ++j)
                for (Index i = 0; i < K; ++i) s(i, j) = n(rng);
            const std::vector<Index> a = optimal_assignment(s);
            std::vector<Index> sorted = a;
            std::sort(sorted.begin(), sorted.end());
            for (Index i = 0; i < K; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
            double total = 0.0;
            for (Index i = 0; i < K; ++i) total += s(i, a[static_cast<std::size_t>(i)]);
            EXPECT_NEAR(total, brute_force_best(s), 1e-12);
        }
    }
    EXPECT_THROW(optimal_assignment(Matrix::Zero(2, 3)), invalid_argument_error);
}

TEST(Evaluation, SelfMatchIsPerfect)
{
    std::mt19937_64 rng(1);
    const auto truth = random_footprints(4, 10, 6, rng);
    Matrix traces = Matrix::Random(4, 6);
    MatchResult m = match_components(truth, truth);
    EXPECT_NEAR(spatial_accuracy(m).mean, 1.0, 1e-12);
    EXPECT_NEAR(temporal_accuracy(m, traces, traces).mean, 1.0, 1e-12);
    for (Index e = 0; e < 4; ++e) EXPECT_EQ(m.permutation[static_cast<std::size_t>(e)], e);
}

TEST(Evaluation, RecoversReversedOrderAndAffineScaling)
{
    std::mt19937_64 rng(2);
    const auto truth = random_footprints(5, 12, 4, rng);
    std::vector<Matrix> est;
    for (int k = 4; k >= 0; --k) est.push_back((2.5 * truth[static_cast<std::size_t>(k)].array() + 0.3).matrix());
    Matrix true_traces = Matrix::Random(5, 9);
    const Matrix est_traces = (true_traces.colwise().reverse().array() * 4.0 + 1.0).matrix();
    MatchResult m = match_components(est, truth);
    for (Index e = 0; e < 5; ++e) EXPECT_EQ(m.permutation[static_cast<std::size_t>(e)], 4 - e);
    EXPECT_NEAR(spatial_accuracy(m).mean, 1.0, 1e-12);
    EXPECT_NEAR(temporal_accuracy(m, est_traces, true_traces).mean, 1.0, 1e-12);
}

TEST(Evaluation, ConstantEstimateScoresZero)
{
    std::mt19937_64 rng(3);
    const auto truth = random_footprints(3, 8, 5, rng);
    std::vector<Matrix> est(3, Matrix::Constant(8, 5, 0.125));
    MatchResult m = match_components(est, truth);
    EXPECT_EQ(spatial_accuracy(m).mean, 0.0);
    Matrix flat = Matrix::Constant(3, 5, 1.0);
    EXPECT_EQ(temporal_accuracy(m, flat, Matrix::Random(3, 5)).mean, 0.0);
}

TEST(Evaluation, UnrelatedEstimatesScoreNearZero)
{
    std::mt19937_64 rng(4);
    const auto truth = random_footprints(1, 500, 20, rng);
    const auto est = random_footprints(1, 500, 20, rng);
    MatchResult m = match_components(est, truth);
    EXPECT_LT(std::abs(spatial_accuracy(m).mean), 0.05);
}

TEST(Evaluation, ShapeMismatchesThrow)
{
    std::mt19937_64 rng(6);
    const auto three = random_footprints(3, 8, 5, rng);
    const auto two = random_footprints(2, 8, 5, rng);
    EXPECT_THROW(match_components(three, two), invalid_argument_error);
    const auto other = random_footprints(3, 9, 5, rng);
    EXPECT_THROW(match_components(three, other), invalid_argument_error);
    MatchResult m = match_components(three, three);
    EXPECT_THROW(temporal_accuracy(m, Matrix::Zero(2, 5), Matrix::Zero(3, 5)), invalid_argument_error);
    EXPECT_THROW(temporal_accuracy(m, Matrix::Zero(3, 4), Matrix::Zero(3, 5)), invalid_argument_error);
}

TEST(Evaluation, TileFootprintsRepeatsColumns)
{
    Matrix D(3, 2);
    D << 0.2, 0.5, 0.3, 0.5, 0.5, 0.0;
    const auto tiles = tile_footprints(D, 4);
    ASSERT_EQ(tiles.size(), 2u);
    for (Index t = 0; t < 4; ++t) EXPECT_EQ(tiles[1].col(t), D.col(1));
}
