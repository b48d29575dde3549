"""
Templates for instance, tour and external-solver files.
"""

from typing import Optional, Sequence

from jinja2 import Template


TSPLIB_TEMPLATE = Template("""NAME : {{ name }}
COMMENT : {{ comment }}
TYPE : TSP
DIMENSION : {{ nodes | length }}
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
{%- for x, y in nodes %}
{{ loop.index }} {{ "%.17g" | format(x) }} {{ "%.17g" | format(y) }}
{%- endfor %}
{%- if fixed_edges %}
FIXED_EDGES_SECTION
{%- for a, b in fixed_edges %}
{{ a }} {{ b }}
{%- endfor %}
-1
{%- endif %}
EOF
""")


TOUR_TEMPLATE = Template("""# name: {{ name }} n: {{ order | length }} length: {{ "%.17g" | format(length) }}
{% for node in order -%}
{{ node }}
{% endfor -%}
""")


LKH_PARAMS_TEMPLATE = Template("""PROBLEM_FILE = {{ problem }}
OUTPUT_TOUR_FILE = {{ output }}
RUNS = {{ runs }}
TIME_LIMIT = {{ time_limit }}
{%- if seed is not none %}
SEED = {{ seed }}
{%- endif %}
""")


def render_tsplib(
    name: str,
    nodes: Sequence[Sequence[float]],
    comment: str = "",
    fixed_edges: Optional[Sequence[Sequence[int]]] = None,
) -> str:
    """
    Render a TSPLIB EUC_2D problem.

    Args:
        name: Problem name
        nodes: Coordinates (written with full double precision)
        comment: Free-form comment line
        fixed_edges: Optional 1-based edges forced into every tour

    Returns:
        TSPLIB file contents
    """
    return TSPLIB_TEMPLATE.render(
        name=name or "instance",
        comment=comment or "generated",
        nodes=[(float(x), float(y)) for x, y in nodes],
        fixed_edges=[(int(a), int(b)) for a, b in (fixed_edges or [])],
    )


def render_tour(name: str, order: Sequence[int], length: float) -> str:
    """Render the project tour format: one header line, then one index per line."""
    return TOUR_TEMPLATE.render(
        name=name or "tour",
        order=[int(v) for v in order],
        length=float(length),
    )


def render_solver_params(
    problem: str,
    output: str,
    time_limit: float,
    runs: int = 1,
    seed: Optional[int] = None,
) -> str:
    """Render an LKH-style parameter file for the external solver adapter."""
    return LKH_PARAMS_TEMPLATE.render(
        problem=problem,
        output=output,
        time_limit=time_limit,
        runs=runs,
        seed=seed,
    )

