#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "icc/rng.hpp"
#include "icc/schedule.hpp"

using namespace icc;

TEST_CASE("two-step hand schedule") {
    NoiseSchedule s = make_linear_schedule(2, 0.1, 0.1);
    REQUIRE_THAT(s.alpha_bar_at(1), Catch::Matchers::WithinRel(0.9, 1e-15));
    REQUIRE_THAT(s.alpha_bar_at(2), Catch::Matchers::WithinRel(0.81, 1e-15));
}

TEST_CASE("alpha_bar strictly decreasing") {
    NoiseSchedule s = make_linear_schedule(50, 1e-4, 0.02);
    REQUIRE(s.alpha_bar_at(50) < s.alpha_bar_at(1));
    for (int t = 2; t <= 50; ++t) REQUIRE(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
}

TEST_CASE("alpha_bar matches cumulative-product oracle") {
    NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        prod *= 1.0 - s.beta_at(t);
        REQUIRE_THAT(s.alpha_bar_at(t), Catch::Matchers::WithinRel(prod, 1e-12));
        REQUIRE_THAT(s.alpha_at(t), Catch::Matchers::WithinRel(1.0 - s.beta_at(t), 1e-15));
    }
}

TEST_CASE("schedule identity abar_t = abar_{t-1} * alpha_t") {
    NoiseSchedule s = make_linear_schedule(200, 1e-3, 0.05);
    for (int t = 1; t <= 200; ++t)
        REQUIRE(s.alpha_bar_at(t) == s.alpha_bar_at(t - 1) * s.alpha_at(t));
}

TEST_CASE("invalid schedule parameters") {
    REQUIRE_THROWS_AS(make_linear_schedule(1, 0.1, 0.2), std::invalid_argument);
    REQUIRE_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), std::invalid_argument);
    REQUIRE_THROWS_AS(make_linear_schedule(10, 0.3, 0.2), std::invalid_argument);
    REQUIRE_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("forward noising basics") {
    NoiseSchedule s = make_linear_schedule(10, 1e-6, 1e-6);
    Rng rng(4);
    Matrix2D z0 = random_gauss(4, 6, rng);
    Matrix2D eps = random_gauss(4, 6, rng);

    // near-zero beta: z_t stays close to z0
    Matrix2D z1 = forward_noising(z0, 1, eps, s);
    REQUIRE(max_abs_diff(z1, z0) < 1e-2);

    // zero noise draws give exactly the scaled signal
    NoiseSchedule s2 = make_linear_schedule(10, 0.05, 0.2);
    Matrix2D zeros(4, 6);
    Matrix2D z5 = forward_noising(z0, 5, zeros, s2);
    const double scale = std::sqrt(s2.alpha_bar_at(5));
    for (std::size_t i = 0; i < z5.size(); ++i)
        REQUIRE_THAT(z5.data()[i], Catch::Matchers::WithinRel(scale * z0.data()[i], 1e-15));

    REQUIRE_THROWS_AS(forward_noising(z0, 0, eps, s), std::out_of_range);
    REQUIRE_THROWS_AS(forward_noising(z0, 11, eps, s), std::out_of_range);
}

TEST_CASE("single-step composition matches the closed form in distribution") {
    // Iterating z_t = sqrt(1-beta) z_{t-1} + sqrt(beta) eps_t with fresh noise
    // must land on mean sqrt(abar_t) z0, variance 1 - abar_t.
    const int T = 6, t_target = 6;
    NoiseSchedule s = make_linear_schedule(T, 0.05, 0.3);
    Rng rng(123);
    const double z0 = 0.7; // scalar element is enough for the moment check
    const int n_draws = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int d = 0; d < n_draws; ++d) {
        double z = z0;
        for (int t = 1; t <= t_target; ++t)
            z = std::sqrt(1.0 - s.beta_at(t)) * z + std::sqrt(s.beta_at(t)) * rng.gauss();
        sum += z;
        sum_sq += z * z;
    }
    const double mean = sum / n_draws;
    const double var = sum_sq / n_draws - mean * mean;
    const double expect_mean = std::sqrt(s.alpha_bar_at(t_target)) * z0;
    const double expect_var = 1.0 - s.alpha_bar_at(t_target);
    REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(expect_mean, 0.01 * std::abs(expect_mean) + 0.01));
    REQUIRE_THAT(var, Catch::Matchers::WithinRel(expect_var, 0.01));
}
