"""Learning-rate and stall schedules, printed as small tables.

Run: python demos/05_schedules.py
"""

from pyramidssl.train import DownstreamSchedule, lr_at, stall_events

sched = DownstreamSchedule(stage1=[[2, 1e-3], [2, 1e-4]], epochs=12, peak_lr=1e-4, warmup_frac=0.05)
ipe = 10
print("stage 1 (frozen encoder): constant steps")
for epoch in range(sched.stage1_epochs):
    print(f"  epoch {epoch}: lr {lr_at(sched, 1, epoch * ipe, ipe):.0e}")

total = sched.stage2_epochs * ipe
print(f"\nstage 2: {total} iterations, warmup {sched.warmup_iters(ipe)}")
for i in (0, 1, 2, 3, 4, 10, 20, 40, 60, total - 1):
    lr = lr_at(sched, 2, i, ipe)
    print(f"  iter {i:3d}: {lr:.3e} {'#' * int(40 * lr / sched.peak_lr)}")

losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.8, 0.8, 0.8, 0.8, 0.8]
print("\nvalidation losses", losses)
for index, action in stall_events(losses, patience=3, delta=1e-3,
                                  actions=[["lr", 1e-4], ["batch", 64]]):
    print(f"  evaluation {index}: stall, set {action[0]} to {action[1]}")
