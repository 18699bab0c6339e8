import json
import math

import numpy as np
import pytest
import torch

from lmaczs import datagen, evaluation as ev
from lmaczs.contrastive import ClapArch, ClapModel
from lmaczs.dsp import AudioClip, Mask, MelFrontend, SpecDomain
from lmaczs.errors import InvalidInputError
from lmaczs.interpreter import ConstantMaskDecoder, decoder_for
from lmaczs.zeroshot import build_prompts

FS = 4000


class TestMetricKernels:
    def test_ff(self):
        assert ev.faithfulness_ff(0.8, 0.3) == pytest.approx(0.5, abs=1e-12)
        assert ev.faithfulness_ff(0.7, 0.7) == 0.0
        assert ev.ff_aggregate([(0.8, 0.3), (0.6, 0.6)]) == pytest.approx(0.25, abs=1e-12)
        with pytest.raises(InvalidInputError):
            ev.faithfulness_ff(1.2, 0.3)

    def test_average_increase(self):
        assert ev.average_increase([(0.5, 0.5)] * 4) == 0.0  # strict inequality
        assert ev.average_increase([(0.1, 0.2), (0.1, 0.3), (0.1, 0.4), (0.5, 0.2)]) == pytest.approx(75.0, abs=1e-9)
        with pytest.raises(InvalidInputError):
            ev.average_increase([])

    def test_average_drop(self):
        assert ev.average_drop([(0.2, 0.5), (0.2, 0.2)]) == 0.0
        assert ev.average_drop([(0.8, 0.2)]) == pytest.approx(75.0, abs=1e-9)
        with pytest.raises(InvalidInputError):
            ev.average_drop([(0.0, 0.2)])

    def test_average_gain(self):
        assert ev.average_gain([(0.5, 0.2), (0.5, 0.5)]) == 0.0
        assert ev.average_gain([(0.5, 0.9)]) == pytest.approx(80.0, abs=1e-9)
        with pytest.raises(InvalidInputError):
            ev.average_gain([(1.0, 0.9)])

    def test_fid_in(self):
        assert ev.fid_in([(1, 1), (2, 2)]) == 1.0
        assert ev.fid_in([(1, 2), (2, 1)]) == 0.0
        assert ev.fid_in([(1, 1), (1, 2)]) == pytest.approx(0.5, abs=1e-12)
        with pytest.raises(InvalidInputError):
            ev.fid_in([])

    def test_sparseness(self):
        assert ev.sparseness(np.ones(7)) == pytest.approx(0.0, abs=1e-12)
        # Gini oracle on sorted values: sum((2i-n-1) x_i) / (n sum x) = 3/4
        assert ev.sparseness(np.array([0.0, 0.0, 0.0, 1.0])) == pytest.approx(0.75, abs=1e-12)
        with pytest.raises(InvalidInputError):
            ev.sparseness(np.zeros(4))
        with pytest.raises(InvalidInputError):
            ev.sparseness(np.array([-1.0, 2.0]))

    def test_complexity(self):
        one_hot = np.zeros(9)
        one_hot[4] = 3.0
        assert ev.complexity(one_hot) == pytest.approx(0.0, abs=1e-12)
        assert ev.complexity(np.full(4, 0.2)) == pytest.approx(math.log(4), abs=1e-12)
        with pytest.raises(InvalidInputError):
            ev.complexity(np.zeros(3))

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        v = rng.uniform(0, 1, 50)
        for k in (0.1, 3.0, 1e4):
            assert ev.sparseness(k * v) == pytest.approx(ev.sparseness(v), abs=1e-12)
            assert ev.complexity(k * v) == pytest.approx(ev.complexity(v), abs=1e-12)

    def test_mask_mean(self):
        m = Mask(values=np.full((4, 4), 0.5), domain=SpecDomain.MEL_LOG_POWER)
        assert ev.mask_mean(m) == 0.5
        assert ev.mask_mean(Mask(values=np.ones((2, 2)), domain=SpecDomain.MEL_LOG_POWER)) == 1.0

    def test_permutation_invariance_over_samples(self):
        rng = np.random.default_rng(1)
        pairs = [(rng.uniform(0.1, 0.9), rng.uniform(0.0, 1.0)) for _ in range(20)]
        shuffled = [pairs[i] for i in rng.permutation(20)]
        for fn in (ev.average_increase, ev.average_drop, ev.average_gain, ev.ff_aggregate):
            assert fn(pairs) == pytest.approx(fn(shuffled), abs=1e-12)


class TestReport:
    def _report(self):
        return ev.MetricsReport(AI=23.45, AD=17.12, AG=10.31, FF=0.51, fid_in=0.68,
                                sps=0.80, comp=9.12, mm=0.17, n_samples=10,
                                dataset="toy", mask_domain="mel", explainer="lmac_zs")

    def test_round_trip(self):
        r = self._report()
        back = ev.MetricsReport.from_dict(json.loads(json.dumps(r.to_dict())))
        assert back == r

    def test_column_order(self):
        text = ev.format_table([self._report()], title="toy")
        header = text.splitlines()[1]
        pos = [header.index(c) for c in ("AI", "AD", "AG", "FF", "Fid-In", "SPS", "COMP", "MM")]
        assert pos == sorted(pos)

    def test_range_validation(self):
        with pytest.raises(InvalidInputError):
            ev.MetricsReport(AI=120, AD=0, AG=0, FF=0, fid_in=0, sps=0, comp=0, mm=0, n_samples=1)


@pytest.fixture(scope="module")
def stack():
    from lmaczs.contrastive import ClapTrainConfig, train_clap

    frontend = MelFrontend(FS, frame_len=256, hop=64, n_mels=16)
    corpus = datagen.make_dataset(n_per_class=7, seed=5, sample_rate=FS)
    arch = ClapArch(vocab=datagen.caption_vocabulary(), embed_dim=16, text_hidden=32, conv_channels=(8, 8, 8, 8), n_mels=16)
    # a briefly trained model so gradient baselines produce meaningful maps
    clap, _ = train_clap(corpus["train"], corpus["val"], arch,
                         ClapTrainConfig(lr=2e-3, batch_size=10, epochs=10, seed=4), frontend)
    clap.eval()
    for p in clap.parameters():
        p.requires_grad_(False)
    prompts = build_prompts(clap, list(datagen.CLASS_LABELS.values()))
    return clap, frontend, prompts, corpus["test"]


class TestSuite:
    @pytest.mark.parametrize("mask_domain", ["mel", "stft"])
    def test_random_control_produces_finite_report(self, stack, mask_domain):
        clap, frontend, prompts, items = stack
        report, records = ev.evaluate_suite(
            items, ev.RandomMaskExplainer(0.5, seed=1), clap, prompts, frontend,
            mask_domain=mask_domain, dataset_tag="toy",
        )
        assert report.n_samples == len(items)
        assert np.all(np.isfinite(report.row()))
        assert report.mm == pytest.approx(0.5, abs=0.05)
        assert len(records) == len(items)

    def test_lmaczs_explainer_runs(self, stack):
        clap, frontend, prompts, items = stack
        torch.manual_seed(6)
        decoder = decoder_for(clap, width=4)
        report, records = ev.evaluate_suite(
            items[:4], ev.LmacZsExplainer(decoder), clap, prompts, frontend, mask_domain="mel",
        )
        assert report.explainer == "lmac_zs"
        assert np.all(np.isfinite(report.row()))
        assert all("p_removed" in r for r in records)

    @pytest.mark.parametrize("name", ["gradcam", "gradcam_pp", "smoothgrad", "integrated_gradients"])
    def test_every_baseline_yields_finite_metrics(self, stack, name):
        clap, frontend, prompts, items = stack
        explainer = ev.make_explainer(name)
        report, _ = ev.evaluate_suite(items[:3], explainer, clap, prompts, frontend, mask_domain="mel")
        assert np.all(np.isfinite(report.row()))

    def test_random_control_matches_target_means(self, stack):
        clap, frontend, prompts, items = stack
        targets = {item.clip_id: 0.2 for item in items[:3]}
        _, records = ev.evaluate_suite(
            items[:3], ev.RandomMaskExplainer(targets, seed=2), clap, prompts, frontend, mask_domain="mel",
        )
        for r in records:
            assert r["mask_mean"] == pytest.approx(0.2, abs=0.05)

    def test_failures_counted_not_fatal(self, stack):
        clap, frontend, prompts, items = stack

        class Flaky:
            name = "flaky"
            calls = 0

            def explain_sample(self, clap, prompts, ctx):
                Flaky.calls += 1
                if Flaky.calls == 1:
                    raise RuntimeError("boom")
                return ev.RandomMaskExplainer(0.5).explain_sample(clap, prompts, ctx)

        report, records = ev.evaluate_suite(items[:3], Flaky(), clap, prompts, frontend, mask_domain="mel")
        assert report.n_failures == 1
        assert report.n_samples == 2

    def test_records_csv(self, stack, tmp_path):
        clap, frontend, prompts, items = stack
        _, records = ev.evaluate_suite(items[:2], ev.RandomMaskExplainer(0.5), clap, prompts, frontend)
        path = tmp_path / "records.csv"
        ev.write_records_csv(records, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3  # header + 2 rows
        assert "mask_mean" in lines[0]


class TestMaskMeanVsSimilarity:
    def test_records_and_rho(self, stack):
        clap, frontend, prompts, items = stack
        torch.manual_seed(7)
        decoder = decoder_for(clap, width=4)
        with torch.no_grad():
            decoder.head.weight.normal_()
            decoder.head.bias.normal_()
        records, rho = ev.mask_mean_vs_similarity(items[:4], clap, decoder, prompts, frontend)
        assert len(records) == 4 * len(prompts.labels)
        assert -1.0 <= rho <= 1.0
        assert all(-1.0 <= r["similarity"] <= 1.0 for r in records)

    def test_too_few_records_rejected(self, stack):
        clap, frontend, prompts, items = stack
        decoder = ConstantMaskDecoder(0.5)
        with pytest.raises(InvalidInputError):
            ev.mask_mean_vs_similarity([], clap, decoder, prompts, frontend)

    def test_constant_records_rejected(self, stack):
        # constant masks give a rank correlation with zero variance on one axis
        clap, frontend, prompts, items = stack
        decoder = ConstantMaskDecoder(0.5)
        with pytest.raises(InvalidInputError):
            ev.mask_mean_vs_similarity(items[:2], clap, decoder, prompts, frontend)


class TestCascadingRandomization:
    def test_stage_zero_is_exactly_one(self, stack):
        clap, frontend, prompts, items = stack
        samples = [(item.clip, 0) for item in items[:2]]
        trace = ev.cascading_randomization(
            clap, ev.gradcam_pp_mask_fn, samples, prompts, frontend, max_blocks=2, seed=3, method="gradcam_pp"
        )
        assert trace.stages[0] == (0, 1.0)
        assert [b for b, _ in trace.stages] == [0, 1, 2]
        assert all(np.isfinite(s) for _, s in trace.stages)

    def test_constant_masks_stay_similar(self, stack):
        clap, frontend, prompts, items = stack
        fn = ev.lmaczs_mask_fn(ConstantMaskDecoder(0.7))
        samples = [(items[0].clip, 0)]
        trace = ev.cascading_randomization(clap, fn, samples, prompts, frontend, max_blocks=4, seed=3)
        for _, sim in trace.stages:
            assert sim == pytest.approx(1.0, abs=1e-9)

    def test_depth_limit(self, stack):
        clap, frontend, prompts, items = stack
        with pytest.raises(InvalidInputError):
            ev.cascading_randomization(
                clap, ev.gradcam_pp_mask_fn, [(items[0].clip, 0)], prompts, frontend, max_blocks=5
            )

    def test_trace_validation(self):
        with pytest.raises(InvalidInputError):
            ev.RandomizationTrace(stages=[(1, 0.5)])
        with pytest.raises(InvalidInputError):
            ev.RandomizationTrace(stages=[(0, 0.9)])
        trace = ev.RandomizationTrace(stages=[(0, 1.0), (1, 0.8)], method="x")
        assert trace.to_dict()["stages"][1]["mask_similarity"] == 0.8
