"""Random well-formed expressions for fuzzing."""
import random

LEAVES = ["x", "y", "pi", "sqrt3", "1", "2.5", "0.3", "3"]


def random_expr(rng: random.Random, depth: int = 4) -> str:
    if depth == 0 or rng.random() < 0.25:
        return rng.choice(LEAVES)
    k = rng.randrange(7)
    a = random_expr(rng, depth - 1)
    if k == 0:
        return f"({a})+({random_expr(rng, depth - 1)})"
    if k == 1:
        return f"({a})-({random_expr(rng, depth - 1)})"
    if k == 2:
        return f"({a})*({random_expr(rng, depth - 1)})"
    if k == 3:
        # denominator kept away from zero
        return f"({a})/(2+sin({random_expr(rng, depth - 1)}))"
    if k == 4:
        return f"({a})^{rng.randint(0, 3)}"
    if k == 5:
        return f"{rng.choice(['sin', 'cos'])}({a})"
    return f"-({a})"
