import asyncio
from typing import Any, Dict, Optional

import pandas as pd
import streamlit as st

# Import configuration and components
from analysis.bandwidth import PRESETS
from analysis.estimator import DEFAULT_KERNEL
from config import Config
from errors import SphericityError
from memory import RunMemory
from observability import TraceLog, configure_logging
from tools.data_io import ingest_upload, to_json
from workflow import AnalysisSettings, SphericityWorkflow

KERNEL_CHOICES = (
    DEFAULT_KERNEL.name,
    "jackknife-biweight",
    "jackknife-triweight",
    "epanechnikov",
    "biweight",
    "triweight",
)

# Custom CSS for the result cards
CARD_CSS = """
<style>
    .main-header {
        background: linear-gradient(135deg, #667eea 0%, #764ba2 100%);
        padding: 1.5rem;
        border-radius: 15px;
        margin-bottom: 1.5rem;
        text-align: center;
        color: white;
    }
</style>
"""


def _float_list(text: str):
    return tuple(float(x) for x in text.replace(",", " ").split())


class SphericityApp:
    """Streamlit workbench: upload a sample, pick bandwidths, read off M², intervals and tests"""

    def __init__(self):
        self.trace = st.session_state.setdefault('trace', TraceLog())
        self.memory = RunMemory(Config.HISTORY_DB) if Config.HISTORY_DB else None

        # Initialize session state
        if 'current_analysis' not in st.session_state:
            st.session_state.current_analysis = None
        if 'diagnostics' not in st.session_state:
            st.session_state.diagnostics = None

    def render_header(self):
        st.markdown(CARD_CSS, unsafe_allow_html=True)
        st.markdown(f"""
        <div class="main-header">
            <h1>🧭 {Config.APP_TITLE}</h1>
            <p>{Config.APP_DESCRIPTION}</p>
        </div>
        """, unsafe_allow_html=True)

    def render_sidebar(self) -> Optional[AnalysisSettings]:
        with st.sidebar:
            st.markdown("### ⚙️ Bandwidths")
            mode = st.radio("Mode", ["Preset grid", "Custom grid", "Explicit"], index=0)
            options: Dict[str, Any] = {}
            if mode == "Preset grid":
                options["preset"] = st.selectbox("Preset", sorted(PRESETS))
            elif mode == "Custom grid":
                options["a_list"] = _float_list(st.text_input("a constants", "0.75 0.8125 0.875 0.9375 1.0"))
                options["c_list"] = _float_list(st.text_input("c constants", "72.5 73.75 75 76.25 77.5"))
            else:
                options["h"] = st.number_input("h", min_value=1e-6, value=0.5, format="%.6f")
                options["kappa"] = st.number_input("kappa", min_value=1e-6, value=100.0)

            st.markdown("### 🧮 Estimator")
            options["kernel"] = st.selectbox("Radial kernel", KERNEL_CHOICES)
            options["bias_reduce"] = st.checkbox("Bias reduction", value=False)
            if options["bias_reduce"]:
                options["bias_reduction_a"] = st.slider("a", 0.05, 0.95, float(Config.BIAS_REDUCTION_A))

            st.markdown("### 📏 Inference")
            options["alpha"] = st.slider("alpha", 0.01, 0.20, 0.05)
            pivotal = st.checkbox("Pivotal (self-normalized) method", value=False)
            options["methods"] = ("jackknife", "pivotal") if pivotal else ("jackknife",)

            st.divider()
            st.markdown("### 📊 Settings")
            for key, value in Config.get_settings_status().items():
                st.caption(f"{key}: {value}")

            if self.memory:
                stats = self.memory.get_memory_stats()
                st.metric("Stored runs", stats['total_runs'])

            st.divider()
            self.trace.display_panel()

        try:
            settings = AnalysisSettings(**options)
            settings.validate()
        except SphericityError as e:
            st.sidebar.error(str(e))
            return None
        return settings

    def render_estimate(self, report: Dict[str, Any]):
        st.markdown("### 📐 Estimate")
        col1, col2, col3, col4 = st.columns(4)
        with col1:
            st.metric("M̂²", f"{report['estimate']['msq']:.4f}")
        with col2:
            st.metric("V̂", f"{report['vhat']:.4f}")
        with col3:
            st.metric("h", f"{report['bandwidths']['h']:.4f}")
        with col4:
            st.metric("κ", f"{report['bandwidths']['kappa']:.2f}")
        st.caption(f"n = {report['sample']['n']}, p = {report['sample']['p']}, "
                   f"σ̂² = {report['variance']['sigma_hat_sq']:.4g}, ŝ² = {report['variance']['s_hat_sq']:.4g}")

    def render_inference(self, report: Dict[str, Any]):
        st.markdown("### 🎯 Confidence Intervals")
        st.dataframe(pd.DataFrame(report['intervals']), use_container_width=True)

        st.markdown("### 🧪 Adaptive Threshold")
        thresholds = {k: v for k, v in report['thresholds'].items() if k != 'alpha'}
        st.dataframe(pd.DataFrame([{"method": k, "delta_hat": v} for k, v in thresholds.items()]),
                     use_container_width=True)
        st.caption("The equivalence test rejects exactly when delta is at least delta_hat.")

    def render_test(self, workflow: SphericityWorkflow):
        st.markdown("### ⚖️ Hypothesis Test")
        col1, col2, col3 = st.columns(3)
        with col1:
            hypothesis = st.selectbox("Hypothesis", ["equivalence", "relevant", "exact"])
        with col2:
            method = "exact" if hypothesis == "exact" else st.selectbox("Method", workflow.settings.methods)
        with col3:
            delta = None if hypothesis == "exact" else st.number_input("delta", min_value=0.0, value=1.0)
        try:
            result = workflow.test(hypothesis, method, delta)
        except SphericityError as e:
            st.error(str(e))
            return
        st.dataframe(pd.DataFrame([result.as_dict()]), use_container_width=True)
        if result.reject:
            st.success(f"Reject H0 at alpha = {result.alpha}")
        else:
            st.info(f"Retain H0 at alpha = {result.alpha}")

    def render_diagnostics(self, diagnostics: Dict[str, Any]):
        st.markdown("### 🔍 Turning-Point Curves")
        col1, col2 = st.columns(2)
        with col1:
            st.markdown("**Along h**")
            st.dataframe(diagnostics['curves']['h'], use_container_width=True)
        with col2:
            st.markdown("**Along κ**")
            st.dataframe(diagnostics['curves']['kappa'], use_container_width=True)

    def render_main_interface(self, settings: Optional[AnalysisSettings]):
        uploaded = st.file_uploader("Upload a CSV sample (one observation per row)", type=["csv", "txt"])
        if uploaded is None or settings is None:
            st.info("Upload data and choose bandwidths to start.")
            return

        workflow = SphericityWorkflow(settings, self.trace)
        col1, col2 = st.columns(2)
        with col1:
            analyze = st.button("🚀 Analyze", type="primary", use_container_width=True)
        with col2:
            diagnose = st.button("🔍 Diagnose bandwidths", use_container_width=True,
                                 disabled=settings.bandwidth_mode == "explicit")

        try:
            sample = ingest_upload(uploaded.getvalue())
            if analyze:
                with st.spinner("Estimating M² and its variance..."):
                    report = asyncio.run(workflow.run_complete_analysis(sample))
                st.session_state.current_analysis = (settings, report, workflow)
                if self.memory:
                    self.memory.store_run("app", settings.as_dict(), report)
            if diagnose:
                with st.spinner("Evaluating the bandwidth grid..."):
                    st.session_state.diagnostics = asyncio.run(workflow.diagnose(sample))
        except SphericityError as e:
            st.error(f"{type(e).__name__}: {e}")
            return

        if st.session_state.current_analysis and st.session_state.current_analysis[0] == settings:
            _, report, workflow = st.session_state.current_analysis
            self.render_estimate(report)
            self.render_inference(report)
            self.render_test(workflow)
            st.download_button("Download report (JSON)", to_json(report), file_name="sphericity_report.json")

        if st.session_state.diagnostics:
            self.render_diagnostics(st.session_state.diagnostics)

    def run(self):
        """Run the workbench"""
        self.render_header()
        settings = self.render_sidebar()
        self.render_main_interface(settings)


# Run the application
if __name__ == "__main__":
    configure_logging()
    st.set_page_config(page_title=Config.APP_TITLE, page_icon="🧭", layout="wide")
    app = SphericityApp()
    app.run()
