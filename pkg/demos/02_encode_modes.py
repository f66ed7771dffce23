"""Encode one image at every operating mode and inspect the bytes.

Run: python3 demos/02_encode_modes.py
"""

# %% One encoding per mode, each within its byte budget
from cdvslite import synthetic
from cdvslite.compress import MODE_BUDGETS, MODES
from cdvslite.container import OVERHEAD
from cdvslite.evaluation import match_pair
from cdvslite.parallel import StageTimings
from cdvslite.pipeline import EncodedImage, default_bundle, encode_image

bundle = default_bundle()
img = synthetic.textured_image(seed=11, height=480, width=640)
encs = {}
for mode in MODES:
    e = encode_image(img, bundle, mode)
    c = e.container()
    encs[mode] = e
    print(f"{mode:>5}: {len(c.global_bytes):5d} B global + {len(c.local_bytes):5d} B local "
          f"= {c.payload_size:5d} / {MODE_BUDGETS[mode]} B, {len(e.codes):3d} local codes")
print(f"(container adds {OVERHEAD} bytes of header and checksum)")

# %% Containers decode back to the same descriptor
data = encs["4K"].to_bytes()
back = EncodedImage.from_bytes(data, bundle)
print("4K round trip exact:", back.to_bytes() == data)

# %% Matching a transformed copy against the original
query = synthetic.Transform(quarter_turns=1, scale=0.75, blur=0.7).apply(img)
for mode in ("1K", "4K", "16K"):
    r = match_pair(encode_image(query, bundle, mode), encs[mode])
    print(f"{mode:>4}: global similarity {r.global_similarity:+.3f}, {r.local_match_count} local matches")

# %% Where the time goes
t = StageTimings()
encode_image(img, bundle, "4K", timings=t)
pct = t.percentages()
for label in t.labels():
    print(f"  {label:<12} {t.total_ms(label):7.1f} ms  {pct[label]:5.1f}%")
