#include <doctest.h>

#include <cmath>
#include <limits>

#include "sahp/dataset_io.hpp"
#include "sahp/hawkes.hpp"
#include "sahp/model.hpp"
#include "sahp/train.hpp"

using namespace sahp;

namespace {

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

SAHPConfig tiny_config(int num_types = 2) {
    SAHPConfig c;
    c.num_types = num_types;
    c.model_dim = 8;
    c.num_heads = 2;
    c.num_layers = 2;
    c.dropout_rate = 0.0;
    return c;
}

/// States with mu == eta: the interval intensity is the constant softplus(mu).
std::vector<std::vector<IntensityState>> constant_states(const Sequence& seq, int num_types, double lambda) {
    const double raw = softplus_inverse(lambda);
    std::vector<std::vector<IntensityState>> states(seq.events.size());
    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        states[k].assign(static_cast<std::size_t>(num_types), IntensityState{raw, raw, 1.0, seq.events[k].time});
    }
    return states;
}

Sequence poisson_like(std::uint64_t seed, int num_types, std::size_t length, double gap_rate = 1.5) {
    RngStream rng(seed);
    Sequence seq;
    double t = 0.0;
    for (std::size_t i = 0; i < length; ++i) {
        t += rng.exponential(gap_rate);
        seq.events.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(num_types))), t});
    }
    seq.horizon = t + rng.exponential(gap_rate);
    return seq;
}

/// High-resolution trapezoid of the total interval intensity over all
/// intervals of the sequence — the quadrature oracle for the compensator.
double quadrature_compensator(const std::vector<std::vector<IntensityState>>& states, const Sequence& seq,
                              int points_per_interval = 100000) {
    double total = 0.0;
    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        const double start = seq.events[k].time;
        const double end = k + 1 < seq.events.size() ? seq.events[k + 1].time : seq.horizon;
        if (end <= start) continue;
        const double h = (end - start) / points_per_interval;
        auto total_lambda = [&](double t) {
            double v = 0.0;
            for (const auto& s : states[k]) v += intensity_at(s, t);
            return v;
        };
        double acc = 0.5 * (total_lambda(start) + total_lambda(end));
        for (int i = 1; i < points_per_interval; ++i) acc += total_lambda(start + h * i);
        total += acc * h;
    }
    return total;
}

}  // namespace

TEST_CASE("stratified offsets land one sample in each sub-interval") {
    RngStream rng(1);
    const ad::Mat offsets = draw_mc_offsets(6, 10, rng);
    for (Eigen::Index k = 0; k < offsets.rows(); ++k) {
        for (int s = 0; s < 10; ++s) {
            CHECK(offsets(k, s) >= s / 10.0);
            CHECK(offsets(k, s) < (s + 1) / 10.0);
        }
    }
    CHECK_THROWS_AS(draw_mc_offsets(3, 0, rng), std::invalid_argument);
}

TEST_CASE("mc compensator is exact for a constant total intensity") {
    Sequence seq = poisson_like(5, 2, 6);
    const double lambda = 0.9;  // per type; total 1.8
    auto states = constant_states(seq, 2, lambda);
    const double span = seq.horizon - seq.events.front().time;
    for (int n : {1, 3, 10}) {
        RngStream rng(40 + n);
        const double estimate = mc_compensator_from_states(states, seq, n, rng);
        CHECK(estimate == doctest::Approx(2.0 * lambda * span).epsilon(1e-12));
    }
}

TEST_CASE("mc compensator scales linearly with interval lengths for the constant stub") {
    Sequence seq = poisson_like(6, 1, 5);
    Sequence doubled = seq;
    for (Event& ev : doubled.events) ev.time *= 2.0;
    doubled.horizon *= 2.0;
    auto states = constant_states(seq, 1, 0.7);
    auto states2 = constant_states(doubled, 1, 0.7);
    RngStream r1(9), r2(9);
    const double base = mc_compensator_from_states(states, seq, 4, r1);
    const double twice = mc_compensator_from_states(states2, doubled, 4, r2);
    CHECK(twice == doctest::Approx(2.0 * base).epsilon(1e-12));
}

TEST_CASE("mc compensator tracks the quadrature oracle for decaying intensities") {
    RngStream rng(77);
    Sequence seq = poisson_like(7, 2, 5);
    std::vector<std::vector<IntensityState>> states(seq.events.size());
    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        for (int u = 0; u < 2; ++u) {
            states[k].push_back(IntensityState{rng.uniform(-1.0, 2.0), rng.uniform(-1.0, 3.0),
                                               rng.uniform(0.2, 3.0), seq.events[k].time});
        }
    }
    const double oracle = quadrature_compensator(states, seq);
    RngStream mc(123);
    const double estimate = mc_compensator_from_states(states, seq, 10000, mc);
    CHECK(estimate == doctest::Approx(oracle).epsilon(0.01));

    // two different seeds at n = 10^4 agree within half a percent
    RngStream mc2(456);
    const double estimate2 = mc_compensator_from_states(states, seq, 10000, mc2);
    CHECK(std::abs(estimate - estimate2) / std::abs(oracle) < 0.005);
}

TEST_CASE("mc estimator is unbiased against the quadrature value") {
    RngStream rng(88);
    Sequence seq = poisson_like(8, 1, 4);
    std::vector<std::vector<IntensityState>> states(seq.events.size());
    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        states[k].push_back(IntensityState{rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 2.0), rng.uniform(0.3, 2.0),
                                           seq.events[k].time});
    }
    const double oracle = quadrature_compensator(states, seq);
    const int runs = 200;
    std::vector<double> estimates(runs);
    double mean = 0.0;
    for (int i = 0; i < runs; ++i) {
        RngStream mc(3000 + i);
        estimates[i] = mc_compensator_from_states(states, seq, 10, mc);
        mean += estimates[i];
    }
    mean /= runs;
    double var = 0.0;
    for (double e : estimates) var += (e - mean) * (e - mean);
    var /= (runs - 1);
    const double se_mean = std::sqrt(var / runs);
    CHECK(std::abs(mean - oracle) <= 2.0 * se_mean + 1e-12);
}

TEST_CASE("sequence NLL of the unit-rate stub on a two-event window") {
    // events at 0.5 and 1.0, horizon 1.0, constant lambda 1: the only event
    // term is log 1 = 0 and the compensator over (0.5, 1.0] is 0.5.
    Sequence seq{{{0, 0.5}, {0, 1.0}}, 1.0};
    auto states = constant_states(seq, 1, 1.0);
    RngStream rng(3);
    CHECK(nll_from_states(states, seq, 7, rng) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("single-event sequences contribute the compensator only") {
    Sequence seq{{{0, 0.4}}, 2.0};
    auto states = constant_states(seq, 1, 0.8);
    RngStream rng(4);
    CHECK(nll_from_states(states, seq, 5, rng) == doctest::Approx(0.8 * 1.6).epsilon(1e-12));
}

TEST_CASE("graph NLL agrees with the state-based evaluation on shared offsets") {
    SAHPConfig config = tiny_config();
    ModelParams params = init_params(config, 55);
    Sequence seq = poisson_like(12, 2, 5);

    RngStream offsets_rng(31);
    const ad::Mat offsets = draw_mc_offsets(seq.events.size(), 6, offsets_rng);

    ad::Graph graph;
    ParamVars pv = make_param_vars(graph, params, false);
    ad::Var nll = sequence_nll_node(graph, pv, config, seq, offsets, nullptr);

    // independent evaluation of the same quantity from plain states
    auto states = sequence_states(params, config, seq);
    double expect = 0.0;
    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        const double start = seq.events[k].time;
        const double end = k + 1 < seq.events.size() ? seq.events[k + 1].time : seq.horizon;
        const double len = std::max(0.0, end - start);
        for (int s = 0; s < offsets.cols(); ++s) {
            for (int u = 0; u < 2; ++u) {
                expect += len / 6.0 * intensity_at(states[k][static_cast<std::size_t>(u)],
                                                   start + len * offsets(static_cast<Eigen::Index>(k), s));
            }
        }
        if (k + 1 < seq.events.size()) {
            expect -= std::log(
                intensity_at(states[k][static_cast<std::size_t>(seq.events[k + 1].type)], seq.events[k + 1].time));
        }
    }
    CHECK(nll.value()(0, 0) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("NLL gradient matches central finite differences on sampled entries") {
    SAHPConfig config = tiny_config();
    const int checks_per_tensor = 6;  // spot entries; the acceptance suite sweeps every entry
    for (std::uint64_t draw = 0; draw < 3; ++draw) {
        ModelParams params = init_params(config, 100 + draw);
        Sequence seq = poisson_like(200 + draw, config.num_types, 3);
        RngStream offsets_rng(300 + draw);
        const ad::Mat offsets = draw_mc_offsets(seq.events.size(), 4, offsets_rng);

        auto nll_value = [&](const ModelParams& p) {
            ad::Graph graph;
            ParamVars pv = make_param_vars(graph, p, false);
            return sequence_nll_node(graph, pv, config, seq, offsets, nullptr).value()(0, 0);
        };

        ad::Graph graph;
        ParamVars pv = make_param_vars(graph, params, true);
        ad::Var nll = sequence_nll_node(graph, pv, config, seq, offsets, nullptr);
        graph.backward(nll);
        GradientMap grads;
        pv.for_each([&](const std::string& name, ad::Var v) { grads.emplace(name, v.grad()); });

        RngStream pick(400 + draw);
        params.for_each_trainable([&](const std::string& name, ad::Mat& tensor) {
            const ad::Mat& g = grads.at(name);
            for (int probe = 0; probe < checks_per_tensor; ++probe) {
                const auto r = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(tensor.rows())));
                const auto col = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(tensor.cols())));
                const double h = 1e-5;
                const double saved = tensor(r, col);
                tensor(r, col) = saved + h;
                const double up = nll_value(params);
                tensor(r, col) = saved - h;
                const double dn = nll_value(params);
                tensor(r, col) = saved;
                const double fd = (up - dn) / (2.0 * h);
                CHECK(g(r, col) == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
            }
        });
    }
}

TEST_CASE("fixed frequencies do not appear in the gradient set") {
    SAHPConfig config = tiny_config();
    ModelParams params = init_params(config, 61);
    Sequence seq = poisson_like(62, 2, 4);
    RngStream mc(63);
    std::vector<const Sequence*> batch{&seq};
    auto result = batch_nll_grad(params, config, batch, 4, mc, std::nullopt);
    CHECK(result.grads.find("angular_freq") == result.grads.end());
    CHECK(result.grads.count("type_embedding") == 1);
    // the compensator couples every embedding to the loss on a random init
    CHECK(result.grads.at("type_embedding").cwiseAbs().maxCoeff() > 0.0);
    CHECK(result.counted_events == 3);
}

TEST_CASE("worker count does not change batch gradients") {
    SAHPConfig config = tiny_config();
    ModelParams params = init_params(config, 71);
    std::vector<Sequence> seqs;
    for (std::uint64_t i = 0; i < 6; ++i) seqs.push_back(poisson_like(700 + i, 2, 5));
    std::vector<const Sequence*> batch;
    for (const auto& s : seqs) batch.push_back(&s);
    auto serial = batch_nll_grad(params, config, batch, 5, RngStream(9), std::nullopt, 1);
    auto parallel = batch_nll_grad(params, config, batch, 5, RngStream(9), std::nullopt, 4);
    CHECK(serial.nll == parallel.nll);
    for (const auto& [name, g] : serial.grads) {
        CHECK((g - parallel.grads.at(name)).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("warmup schedule is exact") {
    for (int s = 1; s <= 8; ++s) {
        CHECK(warmup_learning_rate(2e-3, s, 8) == 2e-3 * s / 8.0);
    }
    CHECK(warmup_learning_rate(2e-3, 9, 8) == 2e-3);
    CHECK(warmup_learning_rate(2e-3, 100, 0) == 2e-3);
}

TEST_CASE("training is deterministic and early stopping counts patience") {
    HawkesSpec spec = benchmark_two_type_spec();
    Dataset data;
    data.num_types = 2;
    for (int i = 0; i < 12; ++i) data.sequences.push_back(simulate_thinning(spec, 12.0, 7000 + i));
    data = split_dataset(data, {0.6, 0.2, 0.2}, 5);

    SAHPConfig config = tiny_config();
    config.num_layers = 1;
    config.dropout_rate = 0.1;
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.warmup_steps = 4;
    tc.batch_size = 4;
    tc.max_epochs = 3;
    tc.mc_samples = 3;
    tc.patience = 5;
    tc.seed = 11;

    ModelParams init = init_params(config, 11);
    TrainResult a = train(config, init, data, tc);
    TrainResult b = train(config, init, data, tc);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_nll_per_event == b.history[i].train_nll_per_event);
        CHECK(a.history[i].val_nll_per_event == b.history[i].val_nll_per_event);
        CHECK(a.history[i].learning_rate == b.history[i].learning_rate);
    }
    bool identical = true;
    a.params.for_each_trainable([&](const std::string& name, const ad::Mat& m) {
        b.params.for_each_trainable([&](const std::string& n2, const ad::Mat& m2) {
            if (n2 == name) identical = identical && (m - m2).cwiseAbs().maxCoeff() == 0.0;
        });
    });
    CHECK(identical);

    // forced stop: infinite improvement threshold halts after patience+1 epochs
    TrainConfig forced = tc;
    forced.early_stop_delta = std::numeric_limits<double>::infinity();
    forced.patience = 2;
    forced.max_epochs = 50;
    TrainResult stopped = train(config, init, data, forced);
    CHECK(stopped.early_stopped);
    CHECK(stopped.history.back().epoch == 3);  // epochs 1..patience+1 plus the epoch-0 row
}

TEST_CASE("a few epochs of training reduce the validation NLL on easy data") {
    HawkesSpec spec = benchmark_two_type_spec();
    Dataset data;
    data.num_types = 2;
    for (int i = 0; i < 30; ++i) data.sequences.push_back(simulate_thinning(spec, 15.0, 9000 + i));
    data = split_dataset(data, {0.7, 0.15, 0.15}, 9);

    SAHPConfig config = tiny_config();
    config.num_layers = 1;
    TrainConfig tc;
    tc.learning_rate = 5e-3;
    tc.warmup_steps = 10;
    tc.batch_size = 8;
    tc.max_epochs = 8;
    tc.mc_samples = 5;
    tc.patience = 8;
    tc.seed = 21;

    TrainResult result = train(config, init_params(config, 21), data, tc);
    CHECK(result.best_val_nll_per_event < result.history.front().val_nll_per_event);
}

TEST_CASE("training rejects an invalid setup") {
    Dataset data;
    data.num_types = 2;
    data.sequences.push_back({{{0, 1.0}, {1, 2.0}}, 3.0});
    SAHPConfig config = tiny_config();
    TrainConfig tc;
    CHECK_THROWS_AS(train(config, init_params(config, 1), data, tc), DataError);  // no splits

    TrainConfig bad = tc;
    bad.mc_samples = 0;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = tc;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = tc;
    bad.early_stop_delta = -1.0;
    CHECK_THROWS_AS(bad.validate(), DataError);
}
