"""Desk-scale training run: toy network, 500 AdamW steps, held-out PSNR/SSIM against bicubic."""
import argparse
from dataclasses import replace

from asgnn_sr.network import param_init, save_params
from asgnn_sr.toydata import toy_network, toy_pairs, toy_run
from asgnn_sr.trainer import bicubic_baseline, train_pairs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--steps", type=int, default=50, help="steps per epoch")
    ap.add_argument("--checkpoint", help="optional path for the final parameters")
    a = ap.parse_args()

    pairs = toy_pairs(count=20, size=96, scale=2, seed=a.seed)
    train_set, test_set = pairs[:15], pairs[15:]
    net = toy_network()
    run = replace(toy_run(a.seed), epochs=a.epochs, steps_per_epoch=a.steps)
    print("epoch\tloss\tpsnr\tssim")
    result = train_pairs(param_init(net, seed=a.seed), train_set, test_set, run, on_epoch=lambda e: print(e.line()))
    bp, bs = bicubic_baseline(test_set, net.scale)
    final = result.log[-1]
    print(f"bicubic\t{bp:.4f}/{bs:.4f}")
    print(f"model\t{final.psnr:.4f}/{final.ssim:.4f}\t(+{final.psnr - bp:.3f} dB, {result.seconds:.0f}s)")
    if a.checkpoint:
        save_params(a.checkpoint, result.params)


if __name__ == "__main__":
    main()
