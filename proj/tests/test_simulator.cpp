#include <doctest.h>

#include <cmath>

#include "sahp/dataset_io.hpp"
#include "sahp/hawkes.hpp"

using namespace sahp;

namespace {

HawkesSpec one_type_exponential(double mu, double alpha, double gamma) {
    HawkesSpec spec;
    spec.num_types = 1;
    spec.base = {mu};
    spec.kernels = {{kernels::Exponential{alpha, gamma}}};
    return spec;
}

}  // namespace

TEST_CASE("true intensity: base rate with empty history") {
    HawkesSpec spec = one_type_exponential(0.7, 0.2, 1.0);
    CHECK(true_intensity(spec, {}, 3.0, 0) == doctest::Approx(0.7));
}

TEST_CASE("true intensity: single exponential contribution by hand") {
    HawkesSpec spec = one_type_exponential(0.1, 0.2, 1.0);
    std::vector<Event> history{{0, 0.0}};
    // mu + alpha e^{-gamma (t - t')} = 0.1 + 0.2 e^{-1}
    CHECK(true_intensity(spec, history, 1.0, 0) == doctest::Approx(0.1 + 0.2 * std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("true intensity is additive over history events") {
    HawkesSpec spec = benchmark_two_type_spec();
    std::vector<Event> both{{0, 0.4}, {1, 1.1}};
    std::vector<Event> first{{0, 0.4}};
    std::vector<Event> second{{1, 1.1}};
    const double t = 2.7;
    for (int u = 0; u < 2; ++u) {
        const double sum = true_intensity(spec, first, t, u) + true_intensity(spec, second, t, u);
        CHECK(true_intensity(spec, both, t, u) == doctest::Approx(sum - spec.base[static_cast<std::size_t>(u)]));
    }
}

TEST_CASE("true intensity rejects history at or after t") {
    HawkesSpec spec = one_type_exponential(0.1, 0.2, 1.0);
    std::vector<Event> history{{0, 2.0}};
    CHECK_THROWS_AS(true_intensity(spec, history, 2.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(true_intensity(spec, history, 1.0, 0), std::invalid_argument);
}

TEST_CASE("thinning with zero intensity yields an empty sequence") {
    HawkesSpec spec;
    spec.num_types = 2;
    spec.base = {0.0, 0.0};
    spec.kernels = {{kernels::Zero{}, kernels::Zero{}}, {kernels::Zero{}, kernels::Zero{}}};
    Sequence seq = simulate_thinning(spec, 10.0, 5);
    CHECK(seq.events.empty());
    CHECK(seq.horizon == 10.0);
}

TEST_CASE("thinning is deterministic per seed and respects the window") {
    HawkesSpec spec = benchmark_two_type_spec();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Sequence a = simulate_thinning(spec, 25.0, seed);
        Sequence b = simulate_thinning(spec, 25.0, seed);
        CHECK(a == b);
        CHECK(validate_sequence(a, spec.num_types).empty());
    }
}

TEST_CASE("homogeneous rate-2 process has the Poisson mean count") {
    HawkesSpec spec;
    spec.num_types = 1;
    spec.base = {2.0};
    spec.kernels = {{kernels::Zero{}}};
    double total = 0.0;
    const int runs = 1000;
    for (int i = 0; i < runs; ++i) total += static_cast<double>(simulate_thinning(spec, 10.0, i).size());
    const double mean = total / runs;
    CHECK(mean > 19.6);
    CHECK(mean < 20.4);
}

TEST_CASE("long-run rate matches the stationary identity for branching 0.5") {
    // mu / (1 - alpha/gamma) = 0.2 / 0.5 = 0.4 events per unit time
    HawkesSpec spec = one_type_exponential(0.2, 0.5, 1.0);
    double events = 0.0;
    const int runs = 200;
    const double horizon = 200.0;
    for (int i = 0; i < runs; ++i) events += static_cast<double>(simulate_thinning(spec, horizon, 1000 + i).size());
    const double rate = events / (runs * horizon);
    CHECK(rate == doctest::Approx(0.4).epsilon(0.05));
}

TEST_CASE("benchmark process: the second type fires more often at desk horizons") {
    // The type-0 power-law self-kernel has a heavy tail (a quarter of its
    // mass beyond lag 60), so its cascade never builds up over windows this
    // short and type 1 dominates; verified over 60 seeds at T = 60.
    HawkesSpec spec = benchmark_two_type_spec();
    std::size_t count0 = 0, count1 = 0;
    for (int i = 0; i < 60; ++i) {
        Sequence seq = simulate_thinning(spec, 60.0, 40000 + i);
        for (const Event& ev : seq.events) (ev.type == 0 ? count0 : count1) += 1;
    }
    CHECK(count1 > count0);
    const double total_rate = static_cast<double>(count0 + count1) / (60.0 * 60.0);
    CHECK(total_rate > 0.5);
    CHECK(total_rate < 1.1);
}

TEST_CASE("intensity trace: left limits on a sorted grid") {
    HawkesSpec spec = one_type_exponential(0.5, 0.3, 1.2);
    Sequence seq{{{0, 1.0}, {0, 2.0}}, 3.0};
    std::vector<double> grid{0.0, 0.5, 1.0, 1.5, 2.0, 3.0};
    auto trace = intensity_trace(spec, seq, grid);
    REQUIRE(trace.size() == 1);
    // before any event: the base rate
    CHECK(trace[0][0] == doctest::Approx(0.5));
    CHECK(trace[0][1] == doctest::Approx(0.5));
    // exactly at the first event: still the left limit
    CHECK(trace[0][2] == doctest::Approx(0.5));
    CHECK(trace[0][3] == doctest::Approx(0.5 + 0.3 * std::exp(-1.2 * 0.5)));
    // at the second event the first contributes, the second does not yet
    CHECK(trace[0][4] == doctest::Approx(0.5 + 0.3 * std::exp(-1.2 * 1.0)));
    // pointwise agreement with true_intensity
    std::vector<Event> history{seq.events[0]};
    CHECK(trace[0][3] == doctest::Approx(true_intensity(spec, history, 1.5, 0)));

    std::vector<double> unsorted{1.0, 0.5};
    CHECK_THROWS_AS(intensity_trace(spec, seq, unsorted), std::invalid_argument);
}

TEST_CASE("hawkes spec JSON codec round-trips") {
    HawkesSpec spec = benchmark_two_type_spec();
    HawkesSpec back = hawkes_spec_from_json(hawkes_spec_to_json(spec));
    CHECK(back.num_types == 2);
    CHECK(back.base == spec.base);
    for (int u = 0; u < 2; ++u) {
        for (int v = 0; v < 2; ++v) {
            for (double t : {0.0, 0.7, 2.2, 3.9}) {
                CHECK(kernel_eval(back.kernels[u][v], t) == kernel_eval(spec.kernels[u][v], t));
            }
        }
    }
}
