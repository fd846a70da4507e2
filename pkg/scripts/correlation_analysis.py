"""Sample-domain and feature-domain correlation asymmetry versus T60.

    python scripts/correlation_analysis.py --t60 0.25 0.5 0.78 1.0 --ir-kind image
"""
import argparse

from autocw import acoustics as ac
from autocw.experiment import TaskConfig, make_irs
from autocw.features import FeatureConfig, FeatureKind, extract_features, pearson_lag_profile
from autocw.synthdata import CorpusConfig, contaminate, gen_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t60", type=float, nargs="+", default=[0.25, 0.5, 0.78, 1.0])
    ap.add_argument("--ir-kind", choices=("exp", "image"), default="exp")
    ap.add_argument("--utterances", type=int, default=6)
    ap.add_argument("--lags", type=int, default=9)
    args = ap.parse_args()

    corpus = gen_corpus(CorpusConfig(n_utterances=args.utterances, utterance_len_s=1.0, seed=11))
    fcfg = FeatureConfig(feature_kind=FeatureKind.FBANK, delta_order=0)
    clean_feats = [extract_features(x, fcfg) for x in corpus.signals]
    for t60 in args.t60:
        h = make_irs(TaskConfig(t60=t60, ir_kind=args.ir_kind, n_irs=1), seed=5, side=0)[0]
        rev = contaminate(corpus, [h])
        env = ac.avg_xcorr_envelope(corpus.signals, rev.signals)
        rev_feats = [extract_features(y, fcfg) for y in rev.signals]
        rev_feats = [type(r)(r.data[:c.n_frames]) for c, r in zip(clean_feats, rev_feats)]
        prof = pearson_lag_profile(clean_feats, rev_feats, args.lags, args.lags)
        lags = " ".join(f"{p:+d}:{prof[p]:.2f}" for p in (-3, -1, 0, 1, 3))
        print(f"T60 {t60:.2f}  IR T60 {ac.schroeder_t60(h):.3f}  side ratio {ac.side_energy_ratio(env):.3f}  "
              f"pearson {lags}")


if __name__ == "__main__":
    main()
