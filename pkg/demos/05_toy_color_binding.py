"""Train the generator on color cards for 2000 steps (about a minute and a half on CPU),
then check that held-out colors survive the trip through the frozen encoder."""
from v2v.toy import ToyConfig, evaluate_colors, heldout_colors, train_toy

if __name__ == "__main__":
    cfg = ToyConfig()
    result = train_toy(cfg, log=lambda s, l: print(f"step {s:5d} loss {l:.4f}"), log_every=250)
    for m in evaluate_colors(result.dit, result.vlm, heldout_colors(cfg), cfg):
        got = tuple(round(v) for v in m.mean_color)
        print(f"want {m.expected} got {got} max channel error {m.distance:5.1f}")
