"""One forward pass through the frozen encoder and each decoder variant, with parameter accounting.

    python demos/film_decoder_forward.py
    python demos/film_decoder_forward.py --encoder runs/default/encoder/encoder.safetensors
"""

import argparse

import torch

from filmseg.dualenc import DualEncoder, EncoderConfig, EncoderWeights, freeze, load_encoder
from filmseg.hifidecoder import VARIANTS, parameter_counts, predict_mask
from filmseg.scenegen import DatasetConfig, build_dataset
from filmseg.scenegen.grammar import vocabulary
from filmseg.trainloop import decoder_config_for, init_decoder


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--encoder", help="pretrained encoder checkpoint; random weights when omitted")
    args = ap.parse_args()
    torch.set_num_threads(1)

    if args.encoder:
        enc = freeze(load_encoder(args.encoder))
    else:
        torch.manual_seed(0)
        enc = freeze(EncoderWeights(DualEncoder(EncoderConfig.preset("base", vocabulary()))))
    sample = build_dataset(DatasetConfig(n_train=1, n_test_seen=4, n_test_unseen=1, master_seed=1)).test_seen[0]
    print(f"query: {sample.query.text!r} (A={sample.attribute_count})")
    for variant in VARIANTS:
        dec = init_decoder(decoder_config_for(enc, variant=variant), 0)
        c = parameter_counts(dec, enc.model)
        mask = predict_mask(sample.image, sample.query.text, enc, dec)
        print(f"{variant:18s} decoder {c['decoder']:>7,d} params, trainable share {c['trainable_fraction']:.3f}, "
              f"foreground pixels {int(mask.binary_mask.sum())}")


if __name__ == "__main__":
    main()
