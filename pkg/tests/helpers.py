"""Shared builders for tests."""
import torch

from cycleisp.models import BranchConfig, ColorConfig, CycleConfig, CycleISP

TINY_BRANCH = BranchConfig(n_rrg=2, n_dab=1, channels=8, reduction=4)
TINY_COLOR = ColorConfig(n_rrg=1, n_dab=1, channels=8, reduction=4, blur_sigma=2.0)


def tiny_cycle(seed: int = 0, identity_rgb2raw: bool = False) -> CycleISP:
    """Small cycle model; optionally with RGB2RAW wired as an exact identity (dem == input)."""
    torch.manual_seed(seed)
    m = CycleISP(CycleConfig(TINY_BRANCH, TINY_BRANCH, TINY_COLOR))
    if identity_rgb2raw:
        # fresh RRGs are identities, so centre taps on the first three channels pass the image through
        net = m.rgb2raw
        with torch.no_grad():
            for layer in (net.head, net.tail):
                layer.weight.zero_()
                layer.bias.zero_()
            for c in range(3):
                net.head.weight[c, c, 1, 1] = 1.0
                net.tail.weight[c, c, 1, 1] = 1.0
    return m.eval()
