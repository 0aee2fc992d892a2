from __future__ import annotations
import json
import sys
from pathlib import Path

# Add project root to path for Streamlit compatibility
current_file = Path(__file__).resolve()
project_root = current_file.parent.parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

import numpy as np
import streamlit as st

from knee_xai import __version__
from knee_xai.attribution import overlay
from knee_xai.core import Orchestrator
from knee_xai.core.schemas import PhantomParams
from knee_xai.data import generate_phantom, read_container

st.set_page_config(page_title="knee_xai viewer", layout="wide", initial_sidebar_state="expanded")

with st.sidebar:
    st.header("About")
    st.write("**knee_xai**")
    st.write(f"Version: {__version__}")
    st.write("---")
    st.write("Viewer for synthetic knee phantoms, attribution output and run reports.")
    st.write("---")
    st.write("### Sections")
    st.write("1. **Phantom**: generate a volume and inspect its tear mask")
    st.write("2. **Attribution**: browse an output directory written by `attribute`")
    st.write("3. **Report**: results table for a runs directory")

st.title("knee_xai viewer")
st.markdown("---")

if "orchestrator" not in st.session_state:
    st.session_state.orchestrator = Orchestrator()

# ============================================================================
# SECTION 1: PHANTOM
# ============================================================================
st.header("Phantom")
with st.form("phantom_form"):
    col1, col2, col3, col4 = st.columns(4)
    with col1:
        seed = st.number_input("Seed", value=7, step=1)
    with col2:
        index = st.number_input("Index", value=0, min_value=0, step=1)
    with col3:
        edge = st.selectbox("Edge", options=[64, 128, 256], index=0)
    with col4:
        probability = st.slider("Lesion probability", 0.0, 1.0, 0.35)
    generate = st.form_submit_button("Generate", type="primary")

if generate:
    try:
        params = PhantomParams(seed=int(seed), edge=int(edge), lesion_probability=float(probability))
        st.session_state.volume = generate_phantom(params, int(index))
    except ValueError as e:
        st.error(f"Invalid phantom parameters: {str(e)}")

volume = st.session_state.get("volume")
if volume is not None:
    summary = volume.summary()
    col1, col2, col3 = st.columns(3)
    col1.metric("Slices", summary["shape"][0])
    col2.metric("Label", summary["label"])
    col3.metric("Lesion pixels", summary["lesion_pixels"])
    position = st.slider("Slice", 0, volume.num_slices - 1, volume.num_slices // 2)
    left, right = st.columns(2)
    left.image(volume.data[position], caption=f"{volume.patient_id} slice {position}", clamp=True,
               use_column_width=True)
    if volume.roi_mask is not None:
        right.image(overlay(volume.roi_mask[position].astype(np.float64), volume.data[position], normalized=True),
                    caption="tear mask", use_column_width=True)

st.markdown("---")

# ============================================================================
# SECTION 2: ATTRIBUTION
# ============================================================================
st.header("Attribution")
attribution_dir = st.text_input("Attribution output directory", value="")
if attribution_dir:
    index_path = Path(attribution_dir) / "index.json"
    if not index_path.exists():
        st.warning(f"No index.json in {attribution_dir}")
    else:
        doc = json.loads(index_path.read_text(encoding="utf-8"))
        st.write(f"**{doc['method']}** on `{doc['patient_id']}` (target {doc['target']}, tap {doc['tap_layer']})")
        entries = doc["slices"]
        chosen = st.slider("Attribution slice", 0, len(entries) - 1, len(entries) // 2)
        entry = entries[chosen]
        left, right = st.columns(2)
        left.image(str(Path(attribution_dir) / entry["overlay"]), caption="overlay", use_column_width=True)
        raw = read_container(Path(attribution_dir) / entry["map"])
        right.write(f"Raw map range: [{raw.min():.4g}, {raw.max():.4g}]")

st.markdown("---")

# ============================================================================
# SECTION 3: REPORT
# ============================================================================
st.header("Report")
runs_dir = st.text_input("Runs directory", value=str(st.session_state.orchestrator.output_root))
if st.button("Build report"):
    with st.spinner("Collecting run records..."):
        try:
            result = st.session_state.orchestrator.report(runs_dir, Path(runs_dir) / "report")
            st.markdown(result["table"])
            curves = result["files"].get("curves")
            if curves:
                st.image(curves, caption="learning curves")
        except FileNotFoundError as e:
            st.warning(str(e))
        except Exception as e:
            st.error(f"Report failed: {str(e)}")
