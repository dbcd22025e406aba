"""Cluster-tree documents: lossless JSON serialization and HTML export.

A :class:`TreeDocument` is the file-facing form of a cluster tree: run
metadata plus every node's level, parent, termination reason, cell
count, and per-mode supports.  When index dictionaries are supplied the
supports carry the original string keys instead of dense indices, so an
exported document stays readable after the in-memory maps are gone.

The JSON form is deterministic (sorted keys, fixed indentation), and
:func:`export_html` renders a document as a single self-contained HTML
file of nested collapsible sections — no scripts, styles from one inline
block, no network references.
"""

from __future__ import annotations

import html
import json
import os
import tempfile
from dataclasses import dataclass, field

from recten.hierarchy import Cluster, ClusterTree

__all__ = [
    "TreeDocument",
    "export_html",
    "write_text_atomic",
]

#: How many strongest indices per mode the HTML view lists.
_HTML_TOP = 10

_MODE_NAMES = ("mode-0", "mode-1", "mode-2")


def write_text_atomic(path, text: str):
    """Write ``text`` to ``path`` so that no partial file is ever visible.

    The text goes to a temporary file in the destination directory and is
    moved into place with :func:`os.replace`, which is atomic on POSIX.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)  # mkstemp creates 0600; match open()'s default
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


@dataclass
class TreeDocument:
    """Serializable view of a :class:`~recten.hierarchy.ClusterTree`.

    Attributes
    ----------
    metadata : dict
        Free-form run descriptor (input, parameters, seed, version, and
        optionally a creation timestamp).
    dims : tuple of 3 ints
        Shape of the tensor the tree was built from.
    nodes : list of dict
        One entry per cluster, in id order: ``id``, ``level``,
        ``parent``, ``termination``, ``nnz``, and ``supports`` — three
        lists of ``[key, strength]`` pairs, index-ordered, where ``key``
        is the original string when an index map was available and the
        dense integer index otherwise.
    children : dict
        Parent id to list of child ids, in decomposition order.
    root_ids : list of int
        Top-level cluster ids, in decomposition order.
    """

    metadata: dict = field(default_factory=dict)
    dims: tuple = ()
    nodes: list = field(default_factory=list)
    children: dict = field(default_factory=dict)
    root_ids: list = field(default_factory=list)

    # -- construction ------------------------------------------------

    @classmethod
    def from_tree(cls, tree: ClusterTree, metadata: dict | None = None, maps=None) -> "TreeDocument":
        """Build a document from a tree.

        ``maps`` is an optional 3-sequence of index maps (or None per
        mode); mapped modes store original string keys in the supports.
        """
        if maps is None:
            maps = (None, None, None)
        nodes = []
        for cid in sorted(tree.nodes):
            c = tree.nodes[cid]
            supports = []
            for mode, sup in enumerate(c.supports):
                m = maps[mode]
                pairs = [
                    [m.key_of(i) if m is not None else i, float(s)]
                    for i, s in sorted(sup.items())
                ]
                supports.append(pairs)
            nodes.append(
                {
                    "id": c.id,
                    "level": c.level,
                    "parent": c.parent,
                    "termination": c.termination,
                    "nnz": c.nnz,
                    "supports": supports,
                }
            )
        return cls(
            metadata=dict(metadata or {}),
            dims=tuple(tree.dims),
            nodes=nodes,
            children={p: list(kids) for p, kids in sorted(tree.children.items())},
            root_ids=list(tree.root_ids),
        )

    def to_tree(self, maps=None) -> ClusterTree:
        """Rebuild the cluster tree this document was made from.

        ``maps`` must echo the maps given to :meth:`from_tree` so string
        keys translate back to dense indices.
        """
        if maps is None:
            maps = (None, None, None)
        tree = ClusterTree(dims=tuple(self.dims))
        for item in self.nodes:
            supports = []
            for mode, pairs in enumerate(item["supports"]):
                m = maps[mode]
                supports.append(
                    {
                        (m.index_of(k) if m is not None else int(k)): float(s)
                        for k, s in pairs
                    }
                )
            c = Cluster(
                id=int(item["id"]),
                level=int(item["level"]),
                parent=None if item["parent"] is None else int(item["parent"]),
                supports=tuple(supports),
                dims=tuple(self.dims),
                nnz=int(item["nnz"]),
                termination=item["termination"],
            )
            tree.nodes[c.id] = c
        tree.children = {int(p): [int(k) for k in kids] for p, kids in self.children.items()}
        tree.root_ids = [int(i) for i in self.root_ids]
        return tree

    # -- JSON --------------------------------------------------------

    def to_json(self) -> str:
        """Deterministic JSON text (sorted keys, two-space indent)."""
        payload = {
            "metadata": self.metadata,
            "dims": list(self.dims),
            "nodes": self.nodes,
            "children": {str(p): kids for p, kids in self.children.items()},
            "roots": self.root_ids,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TreeDocument":
        payload = json.loads(text)
        return cls(
            metadata=payload["metadata"],
            dims=tuple(payload["dims"]),
            nodes=payload["nodes"],
            children={int(p): kids for p, kids in payload["children"].items()},
            root_ids=list(payload["roots"]),
        )

    def save(self, path):
        write_text_atomic(path, self.to_json())

    @classmethod
    def load(cls, path) -> "TreeDocument":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# ---------------------------------------------------------------------------
# HTML export


_HTML_STYLE = """
body { font-family: sans-serif; margin: 1.5em; }
details { margin: 0.25em 0 0.25em 1.25em; border-left: 2px solid #ccd; padding-left: 0.6em; }
summary { cursor: pointer; font-weight: 600; }
table.meta td { padding: 0 0.8em 0 0; color: #333; }
ul.supports { margin: 0.2em 0; color: #444; }
ul.supports li { list-style: none; }
.term { color: #777; font-weight: 400; }
""".strip()


def _node_summary(item) -> str:
    term = item["termination"]
    tag = "" if term == "none" else f' <span class="term">[{html.escape(term)}]</span>'
    return (
        f"cluster {item['id']} &mdash; level {item['level']}, "
        f"{item['nnz']} cells{tag}"
    )


def _support_lines(item) -> str:
    rows = []
    for mode, pairs in enumerate(item["supports"]):
        top = sorted(pairs, key=lambda kv: (-kv[1], str(kv[0])))[:_HTML_TOP]
        body = ", ".join(f"{html.escape(str(k))} ({s:.3g})" for k, s in top)
        suffix = "" if len(pairs) <= _HTML_TOP else f" &hellip; ({len(pairs)} total)"
        rows.append(f"<li><b>{_MODE_NAMES[mode]}:</b> {body}{suffix}</li>")
    return "\n".join(rows)


def export_html(doc: TreeDocument, path):
    """Render a document as one self-contained collapsible-tree HTML file.

    Every cluster becomes a ``<details>`` section (nested by parentage)
    showing its level, cell count, termination reason, and the ten
    strongest indices per mode.  The file references no external
    resources.
    """
    by_id = {item["id"]: item for item in doc.nodes}

    def render(cid: int, depth: int) -> str:
        item = by_id[cid]
        kids = doc.children.get(cid, [])
        open_attr = " open" if depth < 2 else ""
        parts = [
            f"<details{open_attr}>",
            f"<summary>{_node_summary(item)}</summary>",
            f'<ul class="supports">{_support_lines(item)}</ul>',
        ]
        parts.extend(render(k, depth + 1) for k in kids)
        parts.append("</details>")
        return "\n".join(parts)

    meta_rows = "\n".join(
        f"<tr><td>{html.escape(str(k))}</td><td>{html.escape(json.dumps(v, sort_keys=True))}</td></tr>"
        for k, v in sorted(doc.metadata.items())
    )
    roots = "\n".join(render(r, 1) for r in doc.root_ids)
    dims = html.escape(" x ".join(map(str, doc.dims)))
    page = f"""<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Cluster hierarchy</title>
<style>
{_HTML_STYLE}
</style>
</head>
<body>
<h1>Cluster hierarchy</h1>
<table class="meta">
<tr><td>tensor</td><td>{dims}</td></tr>
<tr><td>clusters</td><td>{len(doc.nodes)}</td></tr>
{meta_rows}
</table>
<details open>
<summary>decomposition root &mdash; {len(doc.root_ids)} top-level clusters</summary>
{roots}
</details>
</body>
</html>
"""
    write_text_atomic(path, page)
