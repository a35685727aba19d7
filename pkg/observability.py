import logging
import time
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, Iterator, List, Optional

from config import Config

logger = logging.getLogger("sphericity.trace")


def configure_logging(level: Optional[str] = None) -> None:
    """Root logging setup shared by the CLI and the workbench"""
    name = (level or ("DEBUG" if Config.DEBUG_MODE else Config.LOG_LEVEL)).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


class TraceLog:
    """Step-level tracing of analysis and experiment pipelines"""

    def __init__(self):
        self.traces: List[Dict[str, Any]] = []
        self.metrics: Dict[str, Dict[str, Any]] = {
            'step_timing': {},
            'sample': {},
            'bandwidth': {},
        }

    def log_trace(self, component: str, action: str, duration: float, status: str = "success",
                  metadata: Optional[Dict[str, Any]] = None):
        trace_data = {
            'timestamp': datetime.now().isoformat(),
            'component': component,
            'action': action,
            'duration': duration,
            'status': status,
            'metadata': metadata or {}
        }
        self.traces.append(trace_data)

        level = logging.ERROR if status == "error" else logging.DEBUG if status == "started" else logging.INFO
        logger.log(level, "%s.%s status=%s duration=%.3fs metadata=%s",
                   component, action, status, duration, trace_data['metadata'])

    def update_metrics(self, metric_type: str, key: str, value: Any):
        if metric_type not in self.metrics:
            self.metrics[metric_type] = {}

        self.metrics[metric_type][key] = {
            'value': value,
            'timestamp': datetime.now().isoformat()
        }

    @contextmanager
    def trace(self, component: str, action: str, **metadata) -> Iterator[Dict[str, Any]]:
        """Time a block; the yielded dict is merged into the trace metadata"""
        extra: Dict[str, Any] = {}
        started = time.perf_counter()
        try:
            yield extra
        except Exception as e:
            self.log_trace(component, action, time.perf_counter() - started, status="error",
                           metadata={**metadata, **extra, 'error': f"{type(e).__name__}: {e}"})
            raise
        duration = time.perf_counter() - started
        self.log_trace(component, action, duration, metadata={**metadata, **extra})
        self.update_metrics('step_timing', f"{component}.{action}", duration)

    def start_workflow_trace(self, workflow_id: str):
        self.log_trace(
            component="Workflow",
            action="start_workflow",
            duration=0.0,
            status="started",
            metadata={"workflow_id": workflow_id}
        )

    def end_workflow_trace(self, workflow_id: str, total_duration: float):
        self.log_trace(
            component="Workflow",
            action="complete_workflow",
            duration=total_duration,
            status="success",
            metadata={"workflow_id": workflow_id}
        )

    def get_performance_summary(self) -> Dict[str, Any]:
        if not self.traces:
            return {"status": "no_data"}

        total_operations = len(self.traces)
        successful_operations = len([t for t in self.traces if t['status'] == 'success'])
        avg_duration = sum(t['duration'] for t in self.traces) / total_operations

        return {
            "total_operations": total_operations,
            "success_rate": (successful_operations / total_operations) * 100,
            "average_duration": avg_duration,
            "components": sorted(set(t['component'] for t in self.traces))
        }

    def display_panel(self):
        """Trace table and timing metrics for the workbench sidebar"""
        import pandas as pd
        import streamlit as st

        st.markdown("#### 🔍 Pipeline Trace")
        summary = self.get_performance_summary()
        if summary.get("status") == "no_data":
            st.info("No traces yet. Run an analysis to see step timings.")
            return

        col1, col2 = st.columns(2)
        with col1:
            st.metric("Steps", summary["total_operations"])
        with col2:
            st.metric("Success Rate", f"{summary['success_rate']:.0f}%")

        frame = pd.DataFrame(self.traces[-20:])[['component', 'action', 'duration', 'status']]
        st.dataframe(frame, use_container_width=True)
